#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "peka/tape.hpp"

namespace peka {

/// Records a scalar loss on `tape` from leaf variables bound to `params`
/// (same order as the parameter list passed to the checker).
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t param_index = 0;  // offending coordinate
  std::size_t row = 0;
  std::size_t col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
  bool passed = true;
};

/// Compares Tape gradients with central differences (f(x+h) - f(x-h)) / 2h on
/// every coordinate. Relative error is |a - n| / max(|a|, |n|, abs_floor).
/// Parameters are restored before returning.
GradCheckReport finite_difference_check(const LossBuilder& loss, std::span<Matrix* const> params,
                                        double h = 1e-5, double tol = 1e-4, double abs_floor = 1e-6);

}  // namespace peka
