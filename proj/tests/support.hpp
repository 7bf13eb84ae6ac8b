#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "doctest.h"
#include "peka/error.hpp"
#include "peka/matrix.hpp"

namespace testing {

// Small generator for property tests. Each case gets its own stream so a
// failure message can name the seed that reproduces it.
struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng); }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  }

  peka::Matrix matrix(std::size_t r, std::size_t c, double sd = 1.0) {
    peka::Matrix m(r, c);
    for (double& x : m.data()) x = normal(sd);
    return m;
  }

  peka::Matrix stochastic(std::size_t r, std::size_t c) {
    peka::Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += (m(i, j) = uniform(0.05, 1.0));
      for (std::size_t j = 0; j < c; ++j) m(i, j) /= s;
    }
    return m;
  }
};

inline void for_seeds(int n, const std::function<void(Gen&)>& body, std::uint64_t base = 1000) {
  for (int i = 0; i < n; ++i) {
    Gen g(base + static_cast<std::uint64_t>(i));
    CAPTURE(i);
    body(g);
  }
}

template <class F>
peka::ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const peka::Error& e) {
    return e.code();
  }
  FAIL("expected peka::Error");
  return peka::ErrorCode::internal;
}

inline std::string error_message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

// Reference triple loop, independent of the library kernel.
inline peka::Matrix naive_matmul(const peka::Matrix& a, const peka::Matrix& b) {
  peka::Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline double max_abs(const peka::Matrix& a, const peka::Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace testing
