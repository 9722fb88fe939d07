#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace cnmgp {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Deterministic child seed for (seed, a, b); distinct tuples give unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ULL));
}

/// Stream index reserved for draws shared by a whole batch (z^v).
inline constexpr std::uint64_t kSharedStream = std::numeric_limits<std::uint64_t>::max();

/// Standard-normal draws from a seeded Mersenne twister.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : gen_(seed) {}

  double next() { return dist_(gen_); }

  std::vector<double> take(std::size_t n) {
    std::vector<double> out(n);
    for (double& z : out) z = next();
    return out;
  }

  std::mt19937_64& engine() noexcept { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace cnmgp
