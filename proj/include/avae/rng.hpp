#pragma once

#include <cstdint>
#include <string_view>

#include "avae/tensor.hpp"

namespace avae {

/// Counter-based generator: the i-th draw of a stream is a pure function of
/// (seed, stream name, i), so adding a new stream never shifts existing ones.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view stream);
  Rng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Standard normal via Box-Muller (consumes two uniforms).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Tensor normal_tensor(const Shape& shape);
  Tensor uniform_tensor(const Shape& shape, double lo, double hi);

  /// Independent child stream, e.g. per example index.
  Rng split(std::uint64_t index) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t fnv1a64(std::string_view s);

}  // namespace avae
