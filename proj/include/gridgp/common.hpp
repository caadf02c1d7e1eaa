#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace gridgp {

inline constexpr const char* kVersion = "0.1.0";

// Malformed input files or config text.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line = -1)
      : std::runtime_error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Structurally invalid data: bad references, violated invariants, bad dimensions.
class ValidationError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure: indefinite covariance, unstable system, singular block.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a, used for config/artifact hashing in run manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), seed);
}

// Deterministic normal/uniform generator. Streams are keyed by (seed, stream
// id) so every stochastic element of a run can be reproduced independently of
// evaluation order. Box-Muller on top of splitmix64/xorshift keeps draws
// bit-identical across platforms, unlike std::normal_distribution.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) {
    state_ = splitmix(seed + 0x9e3779b97f4a7c15ull * (stream + 1));
    if (state_ == 0) state_ = 0x6a09e667f3bcc909ull;
  }
  explicit Rng(std::uint64_t seed) : Rng(seed, 0) {}

  std::uint64_t next_u64() {
    // xorshift64*
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // Uniform in (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Runs fn(i) for i in [0, n) on up to GRIDGP_THREADS workers (or hardware
// concurrency when unset). Work items must write to disjoint outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gridgp
