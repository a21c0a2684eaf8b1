#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "percad/tensor.hpp"

namespace percad {

// Seeded RNG with fully serializable state. Uniform/normal draws are
// implemented on top of the raw engine (no std::*_distribution) so that a
// saved state restores the exact draw sequence: normal_distribution caches
// a spare deviate that operator<< does not capture.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  std::uint64_t u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, no cached spare.
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Modulo bias is irrelevant for dataset-scale n.
    return n == 0 ? 0 : eng_() % n;
  }

  template <typename S>
  void fill_normal(Tensor<S>& t, double stddev = 1.0, double mean = 0.0) {
    for (Index i = 0; i < t.size(); ++i)
      t.data[i] = static_cast<S>(mean + stddev * normal());
  }

  template <typename S>
  void fill_uniform(Tensor<S>& t, double lo, double hi) {
    for (Index i = 0; i < t.size(); ++i)
      t.data[i] = static_cast<S>(uniform(lo, hi));
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::string save() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void load(const std::string& state) {
    std::istringstream is(state);
    is >> eng_;
    PERCAD_CHECK(!is.fail(), "Rng::load: malformed engine state");
  }

  // Stable derivation of independent streams from one master seed.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace percad
