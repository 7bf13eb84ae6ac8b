#pragma once

#include <cstdint>

#include "peka/matrix.hpp"

namespace peka {

struct AdamState {
  Matrix m;
  Matrix v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_param(const Matrix& param);
};

/// One bias-corrected Adam update of `param` in place.
void adam_step(Matrix& param, const Matrix& grad, AdamState& state, double lr);

}  // namespace peka
