#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <string_view>

namespace hbdnn {

namespace detail {

constexpr std::uint64_t golden_gamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Derive a stream key from a root seed and a path of integer identifiers,
/// e.g. derive_key(seed, {example_index, chain}). Distinct paths give
/// statistically independent keys.
inline std::uint64_t derive_key(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> path) {
  std::uint64_t key = detail::mix64(seed + detail::golden_gamma);
  for (std::uint64_t id : path) {
    key = detail::mix64(key ^ detail::mix64(id + 0x632BE59BD9B4E019ULL));
  }
  return key;
}

inline std::uint64_t derive_key(std::uint64_t seed, std::string_view tag,
                                std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t key = derive_key(seed, {detail::hash_tag(tag)});
  for (std::uint64_t id : path) key = derive_key(key, {id});
  return key;
}

/// Counter-based generator: the n-th output is a pure function of
/// (key, n), so a stream can be recreated anywhere from its key alone.
/// Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key = 0) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::golden_gamma);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() { return normal_(*this); }

  double gamma(double shape) {
    return std::gamma_distribution<double>(shape, 1.0)(*this);
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  int binomial(int n, double p) {
    return std::binomial_distribution<int>(n, p)(*this);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace hbdnn
