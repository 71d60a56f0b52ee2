#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "streametm/common.hpp"

namespace streametm {

// Deterministic random source. All distributions are implemented on top of
// raw mt19937_64 output so streams are reproducible across standard
// libraries (std::normal_distribution et al. are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; caches the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Marsaglia-Tsang for shape >= 1, boost trick for shape < 1. Unit scale.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = 0.0;
      while (u == 0.0) u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = 0.0;
      while (u == 0.0) u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  Vec dirichlet(int k, double alpha) {
    Vec g(k);
    for (int i = 0; i < k; ++i) g[i] = gamma(alpha);
    double s = g.sum();
    if (s <= 0.0) throw NumericalError("degenerate dirichlet draw");
    return g / s;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Index draw proportional to nonnegative weights.
  int categorical(const Vec& weights) {
    double total = weights.sum();
    if (!(total > 0.0)) throw NumericalError("categorical weights sum to zero");
    double u = uniform() * total;
    double acc = 0.0;
    for (int i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return static_cast<int>(weights.size()) - 1;
  }

  // Bounded draw without modulo bias (Lemire-style rejection).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InvalidConfigError("Rng::below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream for (seed, stream, step) triples so each
// pipeline stage owns its own reproducible source.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t step = 0) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1) + 0xbf58476d1ce4e5b9ull * (step + 1);
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  return z;
}

}  // namespace streametm
