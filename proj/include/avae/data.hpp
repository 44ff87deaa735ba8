#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avae/tensor.hpp"

namespace avae {

struct Dataset {
  Tensor x;  ///< [n, dim], values in [0, 1]
  std::map<std::string, std::vector<int>> labels;
  std::map<std::string, int> classes;  ///< task -> class count
  std::size_t height = 0, width = 0, channels = 1;
  std::string provenance;

  std::size_t size() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
  /// Throws FormatError on a value outside [0,1] or misaligned labels.
  void validate() const;
  /// FNV-1a over pixels and labels.
  std::uint64_t checksum() const;
};

/// Parse IDX bytes (optionally gzip-compressed). FormatError carries the byte offset.
Dataset parse_idx(const std::vector<std::uint8_t>& image_bytes, const std::vector<std::uint8_t>& label_bytes);
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Raw u8 images [n, h, w] and labels; .gz paths are gzip-compressed.
void write_idx(const std::string& images_path, const std::string& labels_path, std::size_t h, std::size_t w,
               const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& labels);

std::vector<std::uint8_t> read_file(const std::string& path);
/// Inflates gzip data; returns the input unchanged when it has no gzip magic.
std::vector<std::uint8_t> maybe_gunzip(const std::vector<std::uint8_t>& bytes);

/// First n examples of a deterministic permutation (stream "subsample").
Dataset subsample(const Dataset& d, std::size_t n, std::uint64_t seed);

using Rgb = std::array<double, 3>;
const std::vector<Rgb>& default_palette();

/// Multiplicative foreground colouring. Adds a "color" task. ConfigError for K < 1
/// or K larger than the palette.
Dataset colorize(const Dataset& d, int k, std::uint64_t seed);
Dataset colorize(const Dataset& d, const std::vector<Rgb>& palette, std::uint64_t seed);

/// z ~ N(0, I), x = W z + N(0, v I); task "sign" = [z_1 > 0]. Values are not
/// confined to [0,1], so the result is not a pixel dataset.
Dataset synth_linear_gaussian(std::size_t n, const Eigen::MatrixXd& W, double v, std::uint64_t seed);

/// Binary cache: "AVDS", u32 version, u64 header length, JSON header, f32 pixels, i32 labels.
void save_cache(const Dataset& d, const std::string& path);
Dataset load_cache(const std::string& path);

}  // namespace avae
