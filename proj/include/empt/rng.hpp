#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace empt {

// Seeded random stream. Independent streams for initialization, dropout,
// distractor sampling and decoding are derived from one run seed plus a
// purpose tag, so consuming one stream never perturbs another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static Rng stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform integer in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  // Uniform real in [0, 1).
  double uniform();
  double normal(double mean, double stddev);

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace empt
