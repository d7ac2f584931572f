#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace msif {

// Deterministic random source. All distributions are derived from the raw
// 64-bit stream by hand so that results are identical across platforms and
// standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi], inclusive, bias-free.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev);

  // Fisher-Yates shuffle of an index vector.
  void shuffle(std::vector<std::size_t>& v);

  // Derive an independent stream seed from a base seed and a stream tag.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t tag);

 private:
  std::mt19937_64 engine_;
};

}  // namespace msif
