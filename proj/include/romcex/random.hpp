#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "romcex/linalg.hpp"

namespace romcex {

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded normal generator. Each (seed, stream) pair yields its own sequence,
/// so parallel consumers get identical draws regardless of scheduling.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t stream) : engine_(mix_seed(seed, stream)) {}
  explicit NormalStream(std::uint64_t seed) : engine_(mix_seed(seed, 0)) {}

  double operator()() { return normal_(engine_); }
  Vector draw(std::size_t n);
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// FNV-1a 64-bit hash, for provenance stamps.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace romcex
