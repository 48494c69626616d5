#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace edgesplit {

/// Seeded 64-bit generator with the handful of draws the simulator needs.
/// The full engine state can be serialized for checkpoints.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double uniform01() { return uniform(0.0, 1.0); }
  double normal(double mean = 0.0, double stdev = 1.0) {
    return std::normal_distribution<double>(mean, stdev)(engine_);
  }
  /// Integer uniform on [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

  /// Derives an independent child stream; used to give every environment
  /// instance and training phase its own sequence.
  Rng split(std::uint64_t salt) {
    const std::uint64_t a = next_u64();
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
    std::mt19937_64 child(seq);
    return Rng(child);
  }

  std::string state() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
  }
  void set_state(const std::string& s) {
    std::istringstream in(s);
    in >> engine_;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  explicit Rng(std::mt19937_64 e) : engine_(e) {}
  std::mt19937_64 engine_;
};

}  // namespace edgesplit
