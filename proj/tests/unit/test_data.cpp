#include <cmath>
#include <filesystem>
#include <fstream>

#include "avae/data.hpp"
#include "avae/rng.hpp"
#include "doctest.h"

using namespace avae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / "avae_test_data";
  fs::create_directories(d);
  return d / name;
}

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8), std::uint8_t(v)};
}

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w,
                                     const std::vector<std::uint8_t>& px) {
  std::vector<std::uint8_t> b;
  for (auto v : {0x803u, n, h, w}) {
    auto q = be32(v);
    b.insert(b.end(), q.begin(), q.end());
  }
  b.insert(b.end(), px.begin(), px.end());
  return b;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& l) {
  std::vector<std::uint8_t> b;
  for (auto v : {0x801u, std::uint32_t(l.size())}) {
    auto q = be32(v);
    b.insert(b.end(), q.begin(), q.end());
  }
  b.insert(b.end(), l.begin(), l.end());
  return b;
}

std::string error_of(const std::vector<std::uint8_t>& i, const std::vector<std::uint8_t>& l) {
  try {
    parse_idx(i, l);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("idx round trip") {
  std::vector<std::uint8_t> px(2 * 3 * 4), lab = {7, 2};
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 11);
  for (std::string ext : {"", ".gz"}) {
    const auto ip = scratch("img" + ext), lp = scratch("lab" + ext);
    write_idx(ip, lp, 3, 4, px, lab);
    Dataset d = load_idx(ip, lp);
    REQUIRE(d.size() == 2);
    CHECK(d.dim() == 12);
    CHECK(d.height == 3);
    CHECK(d.width == 4);
    for (std::size_t i = 0; i < px.size(); ++i) CHECK(d.x[i] == px[i] / 255.0);
    CHECK(d.labels.at("digit") == std::vector<int>{7, 2});
    CHECK_NOTHROW(d.validate());
  }
  // gz really is compressed
  auto raw = read_file(scratch("img.gz"));
  CHECK(raw[0] == 0x1f);
  CHECK(raw[1] == 0x8b);
}

TEST_CASE("idx errors carry byte offsets") {
  const auto good_i = idx_images(2, 2, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto good_l = idx_labels({1, 0});
  CHECK(error_of(good_i, good_l).empty());
  CHECK(error_of({}, good_l).find("empty") != std::string::npos);
  CHECK(error_of(good_i, {}).find("empty") != std::string::npos);

  auto bad = good_i;
  bad[3] = 0x01;
  CHECK(error_of(bad, good_l).find("bad magic") != std::string::npos);
  CHECK(error_of(bad, good_l).find("byte offset 0") != std::string::npos);
  // labels file given as images
  CHECK(error_of(good_l, good_l).find("bad magic") != std::string::npos);

  auto trunc = good_i;
  trunc.resize(trunc.size() - 3);
  CHECK(error_of(trunc, good_l).find("truncated") != std::string::npos);
  CHECK(error_of(trunc, good_l).find("byte offset 16") != std::string::npos);
  auto hdr = good_i;
  hdr.resize(10);
  CHECK(error_of(hdr, good_l).find("byte offset 8") != std::string::npos);

  CHECK(error_of(good_i, idx_labels({1})).find("does not match") != std::string::npos);
  std::vector<std::uint8_t> junk_gz = {0x1f, 0x8b, 8, 0, 0, 0};
  CHECK(error_of(junk_gz, good_l).find("gzip") != std::string::npos);
}

TEST_CASE("idx header fuzz only raises format errors") {
  const auto base_i = idx_images(3, 2, 2, std::vector<std::uint8_t>(12, 9));
  const auto base_l = idx_labels({1, 2, 3});
  Rng rng(5, "fuzz");
  int errors = 0;
  for (int t = 0; t < 3000; ++t) {
    auto i = base_i;
    auto l = base_l;
    auto& target = rng.below(2) ? i : l;
    const int edits = 1 + static_cast<int>(rng.below(4));
    for (int e = 0; e < edits; ++e) target[rng.below(std::min<std::size_t>(target.size(), 16))] = rng.below(256);
    if (rng.below(3) == 0) target.resize(rng.below(target.size() + 1));
    try {
      Dataset d = parse_idx(i, l);
      CHECK(d.size() * d.dim() == d.x.numel());
    } catch (const FormatError&) {
      ++errors;
    }
  }
  CHECK(errors > 1000);
}

TEST_CASE("bundled mnist") {
  const std::string dir = std::string(AVAE_DATA_DIR) + "/mnist/";
  Dataset tr = load_idx(dir + "train-images-idx3-ubyte.gz", dir + "train-labels-idx1-ubyte.gz");
  Dataset te = load_idx(dir + "t10k-images-idx3-ubyte.gz", dir + "t10k-labels-idx1-ubyte.gz");
  CHECK(tr.size() == 9000);
  CHECK(te.size() == 1000);
  CHECK(tr.height == 28);
  CHECK(tr.width == 28);
  CHECK_NOTHROW(tr.validate());
  std::vector<int> counts(10, 0);
  for (int l : te.labels.at("digit")) ++counts.at(l);
  for (int c : counts) CHECK(c > 50);
}

TEST_CASE("colorize") {
  Dataset g;
  g.x = Rng(1, "img").uniform_tensor({10000, 4}, 0.0, 1.0);
  g.height = 2;
  g.width = 2;
  g.labels["digit"] = std::vector<int>(10000, 3);
  g.classes["digit"] = 10;

  Dataset one = colorize(g, 1, 4);
  CHECK(one.channels == 3);
  for (int c : one.labels.at("color")) CHECK(c == 0);
  const Rgb p0 = default_palette()[0];
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < 4; ++p) CHECK(one.x.at(i, ch * 4 + p) == g.x.at(i, p) * p0[ch]);

  Dataset c7 = colorize(g, 7, 4);
  CHECK_NOTHROW(c7.validate());
  CHECK(c7.labels.at("digit") == g.labels.at("digit"));
  std::vector<double> counts(7, 0.0);
  for (int c : c7.labels.at("color")) counts.at(c) += 1;
  double chi2 = 0;
  for (double o : counts) chi2 += (o - 10000.0 / 7) * (o - 10000.0 / 7) / (10000.0 / 7);
  // 99th percentile of chi-square with 6 degrees of freedom
  CHECK(chi2 < 16.812);

  CHECK(colorize(g, 7, 4).checksum() == c7.checksum());
  CHECK(colorize(g, 7, 5).checksum() != c7.checksum());
  CHECK_THROWS_AS(colorize(g, 0, 4), ConfigError);
  CHECK_THROWS_AS(colorize(g, 8, 4), ConfigError);
  CHECK_THROWS_AS(colorize(c7, 2, 4), ConfigError);
}

TEST_CASE("synthetic linear gaussian") {
  const Eigen::MatrixXd W =
      Eigen::MatrixXd(Eigen::MatrixXd::Random(5, 2)).householderQr().householderQ() * Eigen::MatrixXd::Identity(5, 2);
  const std::size_t n = 100000;
  Dataset d = synth_linear_gaussian(n, W, 0.0, 9);
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(5, 5);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd x(5);
    for (int j = 0; j < 5; ++j) x[j] = d.x.at(i, j);
    S += x * x.transpose();
  }
  S /= static_cast<double>(n);
  CHECK((S - W * W.transpose()).cwiseAbs().maxCoeff() < 5.0 / std::sqrt(double(n)));

  int pos = 0;
  for (int l : d.labels.at("sign")) pos += l;
  CHECK(std::abs(pos - double(n) / 2) < 3 * std::sqrt(n / 4.0));
  CHECK(synth_linear_gaussian(100, W, 0.1, 9).checksum() == synth_linear_gaussian(100, W, 0.1, 9).checksum());
  CHECK(synth_linear_gaussian(100, W, 0.1, 9).checksum() != synth_linear_gaussian(100, W, 0.1, 10).checksum());
}

TEST_CASE("cache round trip and subsample") {
  Dataset g;
  g.x = Rng(2, "img").uniform_tensor({20, 6}, 0.0, 1.0);
  g.height = 2;
  g.width = 3;
  g.labels["digit"] = std::vector<int>(20);
  for (int i = 0; i < 20; ++i) g.labels["digit"][i] = i % 10;
  g.classes["digit"] = 10;
  g.provenance = "unit";
  Dataset c = colorize(g, 3, 1);
  const auto p = scratch("cache.avds");
  save_cache(c, p);
  Dataset back = load_cache(p);
  CHECK(back.labels == c.labels);
  CHECK(back.classes == c.classes);
  CHECK(back.channels == 3);
  CHECK(back.provenance == c.provenance);
  for (std::size_t i = 0; i < c.x.numel(); ++i) CHECK(back.x[i] == static_cast<double>(static_cast<float>(c.x[i])));

  auto bytes = read_file(p);
  bytes.resize(bytes.size() - 2);
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  CHECK_THROWS_AS(load_cache(p), FormatError);

  Dataset s = subsample(g, 5, 3);
  CHECK(s.size() == 5);
  CHECK(subsample(g, 5, 3).checksum() == s.checksum());
  CHECK_THROWS_AS(subsample(g, 21, 3), ConfigError);
}
