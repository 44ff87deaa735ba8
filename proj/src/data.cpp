#include "avae/data.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "avae/errors.hpp"
#include "avae/rng.hpp"
#include "json.hpp"

namespace avae {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr char kCacheMagic[4] = {'A', 'V', 'D', 'S'};
constexpr std::uint32_t kCacheVersion = 1;

struct Reader {
  const std::vector<std::uint8_t>& b;
  const char* what;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(std::string(what) + ": " + msg + " at byte offset " + std::to_string(pos));
  }
  void need(std::size_t n) const {
    if (pos > b.size() || b.size() - pos < n) {
      fail("truncated (need " + std::to_string(n) + " bytes, have " + std::to_string(b.size() - pos) + ")");
    }
  }
  std::uint32_t be32() {
    need(4);
    std::uint32_t v = (std::uint32_t(b[pos]) << 24) | (std::uint32_t(b[pos + 1]) << 16) |
                      (std::uint32_t(b[pos + 2]) << 8) | std::uint32_t(b[pos + 3]);
    pos += 4;
    return v;
  }
};

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  if (gz) {
    gzFile f = gzopen(path.c_str(), "wb9");
    if (!f) throw ConfigError("cannot open " + path + " for writing");
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    if (gzclose(f) != Z_OK || n != static_cast<int>(bytes.size())) throw ConfigError("write failed: " + path);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ConfigError("write failed: " + path);
}

template <class T>
void put_raw(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get_raw(Reader& r) {
  r.need(sizeof(T));
  T v;
  std::memcpy(&v, r.b.data() + r.pos, sizeof(T));
  r.pos += sizeof(T);
  return v;
}

}  // namespace

void Dataset::validate() const {
  if (x.rank() != 2) throw FormatError("dataset: examples must be a matrix");
  const bool pixels = height > 0;
  if (pixels) {
    if (height * width * channels != dim()) throw FormatError("dataset: image dims do not match the row length");
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (!(x[i] >= 0.0 && x[i] <= 1.0)) {
        throw FormatError("dataset: pixel " + std::to_string(i) + " outside [0,1]");
      }
    }
  }
  for (const auto& [task, lab] : labels) {
    if (lab.size() != size()) throw FormatError("dataset: task '" + task + "' labels not aligned with examples");
    auto it = classes.find(task);
    if (it == classes.end()) throw FormatError("dataset: task '" + task + "' has no class count");
    for (int l : lab)
      if (l < 0 || l >= it->second) throw FormatError("dataset: task '" + task + "' label out of range");
  }
}

std::uint64_t Dataset::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  };
  mix(x.data().data(), x.numel() * sizeof(double));
  for (const auto& [task, lab] : labels) {
    mix(task.data(), task.size());
    mix(lab.data(), lab.size() * sizeof(int));
  }
  return h;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::vector<std::uint8_t> maybe_gunzip(const std::vector<std::uint8_t>& in) {
  if (in.size() < 2 || in[0] != 0x1f || in[1] != 0x8b) return in;
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw FormatError("gzip: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      const std::size_t at = zs.total_in;
      inflateEnd(&zs);
      throw FormatError("gzip: corrupt or truncated stream at byte offset " + std::to_string(at));
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      const std::size_t at = zs.total_in;
      inflateEnd(&zs);
      throw FormatError("gzip: truncated stream at byte offset " + std::to_string(at));
    }
  }
  inflateEnd(&zs);
  return out;
}

Dataset parse_idx(const std::vector<std::uint8_t>& image_raw, const std::vector<std::uint8_t>& label_raw) {
  const std::vector<std::uint8_t> ib = maybe_gunzip(image_raw);
  const std::vector<std::uint8_t> lb = maybe_gunzip(label_raw);
  Reader ri{ib, "idx images"};
  if (ib.empty()) ri.fail("empty file");
  const std::uint32_t im = ri.be32();
  if (im != kImageMagic) {
    ri.pos = 0;
    ri.fail("bad magic 0x" + [&] {
      char s[9];
      std::snprintf(s, sizeof s, "%08x", im);
      return std::string(s);
    }());
  }
  const std::uint32_t n = ri.be32(), h = ri.be32(), w = ri.be32();
  if (h == 0 || w == 0) ri.fail("zero image dimension");
  const std::size_t px = static_cast<std::size_t>(h) * w;
  if (px > ib.size()) ri.need(px);
  ri.need(static_cast<std::size_t>(n) * px);

  Reader rl{lb, "idx labels"};
  if (lb.empty()) rl.fail("empty file");
  const std::uint32_t lm = rl.be32();
  if (lm != kLabelMagic) {
    rl.pos = 0;
    rl.fail("bad magic");
  }
  const std::uint32_t nl = rl.be32();
  if (nl != n) rl.fail("label count " + std::to_string(nl) + " does not match image count " + std::to_string(n));
  rl.need(n);

  Dataset d;
  d.x = Tensor({n, px});
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * px; ++i) d.x[i] = ib[ri.pos + i] / 255.0;
  std::vector<int> digits(n);
  int maxl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    digits[i] = lb[rl.pos + i];
    maxl = std::max(maxl, digits[i]);
  }
  d.labels["digit"] = std::move(digits);
  d.classes["digit"] = std::max(10, maxl + 1);
  d.height = h;
  d.width = w;
  d.channels = 1;
  d.provenance = "idx";
  return d;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset d = parse_idx(read_file(images_path), read_file(labels_path));
  d.provenance = "idx:" + images_path;
  return d;
}

void write_idx(const std::string& images_path, const std::string& labels_path, std::size_t h, std::size_t w,
               const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& labels) {
  if (h == 0 || w == 0 || pixels.size() != labels.size() * h * w) {
    throw DimensionError("write_idx: pixel count does not match labels x h x w");
  }
  std::vector<std::uint8_t> ib, lb;
  put_be32(ib, kImageMagic);
  put_be32(ib, static_cast<std::uint32_t>(labels.size()));
  put_be32(ib, static_cast<std::uint32_t>(h));
  put_be32(ib, static_cast<std::uint32_t>(w));
  ib.insert(ib.end(), pixels.begin(), pixels.end());
  put_be32(lb, kLabelMagic);
  put_be32(lb, static_cast<std::uint32_t>(labels.size()));
  lb.insert(lb.end(), labels.begin(), labels.end());
  write_bytes(images_path, ib);
  write_bytes(labels_path, lb);
}

Dataset subsample(const Dataset& d, std::size_t n, std::uint64_t seed) {
  if (n > d.size()) {
    throw ConfigError("subsample: asked for " + std::to_string(n) + " of " + std::to_string(d.size()) + " examples");
  }
  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed, "subsample");
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  perm.resize(n);
  Dataset out = d;
  out.x = d.x.gather_rows(perm);
  for (auto& [task, lab] : out.labels) {
    const auto& src = d.labels.at(task);
    lab.resize(n);
    for (std::size_t i = 0; i < n; ++i) lab[i] = src[perm[i]];
  }
  out.provenance += ";subsample=" + std::to_string(n) + "@" + std::to_string(seed);
  return out;
}

const std::vector<Rgb>& default_palette() {
  static const std::vector<Rgb> p = {
      {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {1.0, 1.0, 0.0},
      {1.0, 0.0, 1.0}, {0.0, 1.0, 1.0}, {1.0, 1.0, 1.0},
  };
  return p;
}

Dataset colorize(const Dataset& d, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("colorize: palette size must be >= 1, got " + std::to_string(k));
  const auto& full = default_palette();
  if (static_cast<std::size_t>(k) > full.size()) {
    throw ConfigError("colorize: default palette has only " + std::to_string(full.size()) + " colours");
  }
  return colorize(d, std::vector<Rgb>(full.begin(), full.begin() + k), seed);
}

Dataset colorize(const Dataset& d, const std::vector<Rgb>& palette, std::uint64_t seed) {
  if (palette.empty()) throw ConfigError("colorize: empty palette");
  if (d.channels != 1) throw ConfigError("colorize: input must be grayscale");
  for (const Rgb& c : palette)
    for (double v : c)
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("colorize: palette entries must lie in [0,1]");
  const std::size_t n = d.size(), px = d.dim();
  Rng rng(seed, "colorize");
  Dataset out;
  out.x = Tensor({n, 3 * px});
  std::vector<int> color(n);
  for (std::size_t i = 0; i < n; ++i) {
    color[i] = static_cast<int>(rng.below(palette.size()));
    const Rgb& c = palette[color[i]];
    // Channel-major planes per example: R..., G..., B...
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < px; ++p) out.x.at(i, ch * px + p) = d.x.at(i, p) * c[ch];
  }
  out.labels = d.labels;
  out.classes = d.classes;
  out.labels["color"] = std::move(color);
  out.classes["color"] = static_cast<int>(palette.size());
  out.height = d.height;
  out.width = d.width;
  out.channels = 3;
  out.provenance = d.provenance + ";colorize=" + std::to_string(palette.size()) + "@" + std::to_string(seed);
  return out;
}

Dataset synth_linear_gaussian(std::size_t n, const Eigen::MatrixXd& W, double v, std::uint64_t seed) {
  if (W.size() == 0) throw DimensionError("synth_linear_gaussian: W is empty");
  if (!(v >= 0.0)) throw DomainError("synth_linear_gaussian: v must be >= 0");
  const std::size_t obs = W.rows(), lat = W.cols();
  Rng rng(seed, "synth");
  Dataset d;
  d.x = Tensor({n, obs});
  std::vector<int> sign(n);
  const double sd = std::sqrt(v);
  Eigen::VectorXd z(lat);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < lat; ++j) z[j] = rng.normal();
    const Eigen::VectorXd x = W * z;
    for (std::size_t j = 0; j < obs; ++j) d.x.at(i, j) = x[j] + sd * rng.normal();
    sign[i] = z[0] > 0.0 ? 1 : 0;
  }
  d.labels["sign"] = std::move(sign);
  d.classes["sign"] = 2;
  d.provenance = "synth_linear_gaussian@" + std::to_string(seed);
  return d;
}

void save_cache(const Dataset& d, const std::string& path) {
  d.validate();
  nlohmann::json h;
  h["n"] = d.size();
  h["dim"] = d.dim();
  h["height"] = d.height;
  h["width"] = d.width;
  h["channels"] = d.channels;
  h["provenance"] = d.provenance;
  h["tasks"] = nlohmann::json::array();
  for (const auto& [task, lab] : d.labels) h["tasks"].push_back({{"name", task}, {"classes", d.classes.at(task)}});
  const std::string hs = h.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  f.write(kCacheMagic, 4);
  put_raw(f, kCacheVersion);
  put_raw(f, static_cast<std::uint64_t>(hs.size()));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (double v : d.x.data()) put_raw(f, static_cast<float>(v));
  for (const auto& [task, lab] : d.labels)
    for (int l : lab) put_raw(f, static_cast<std::int32_t>(l));
  if (!f) throw ConfigError("write failed: " + path);
}

Dataset load_cache(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r{bytes, path.c_str()};
  r.need(4);
  if (std::memcmp(bytes.data(), kCacheMagic, 4) != 0) r.fail("bad magic");
  r.pos = 4;
  const auto version = get_raw<std::uint32_t>(r);
  if (version != kCacheVersion) {
    r.pos = 4;
    r.fail("unsupported version " + std::to_string(version));
  }
  const auto len = get_raw<std::uint64_t>(r);
  r.need(len);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + r.pos, bytes.begin() + r.pos + len);
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("header is not JSON (") + e.what() + ")");
  }
  r.pos += len;
  Dataset d;
  try {
    const std::size_t n = h.at("n"), dim = h.at("dim");
    d.height = h.at("height");
    d.width = h.at("width");
    d.channels = h.at("channels");
    d.provenance = h.at("provenance");
    r.need(n * dim * sizeof(float));
    d.x = Tensor({n, dim});
    for (std::size_t i = 0; i < n * dim; ++i) d.x[i] = get_raw<float>(r);
    for (const auto& t : h.at("tasks")) {
      const std::string name = t.at("name");
      std::vector<int> lab(n);
      for (auto& l : lab) l = get_raw<std::int32_t>(r);
      d.labels[name] = std::move(lab);
      d.classes[name] = t.at("classes");
    }
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad header field (") + e.what() + ")");
  }
  if (r.pos != bytes.size()) r.fail("trailing bytes");
  d.validate();
  return d;
}

}  // namespace avae
