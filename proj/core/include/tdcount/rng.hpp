#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "tdcount/tensor.hpp"

namespace tdc {

// Portable random stream: std::mt19937_64 (whose output sequence is fixed by
// the standard) with hand-written uniform/normal/Poisson transforms, since the
// std:: distributions are implementation-defined. Identical seeds produce
// identical draws on every conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via the Box-Muller transform; pairs are cached.
  double normal();
  std::int64_t poisson(double mean);
  bool bernoulli(double p) { return uniform() < p; }

  Tensor normal_tensor(std::vector<int> shape);

  // Complete state, for checkpoints.
  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

// Derives a child seed from a parent seed and a list of integer tags.
template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t base, Tags... tags) {
  std::uint64_t s = mix64(base);
  ((s = mix64(s ^ (static_cast<std::uint64_t>(tags) + 0x9e3779b97f4a7c15ULL))), ...);
  return s;
}

// FNV-1a over bytes; stable across platforms, used for tags and config hashes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace tdc
