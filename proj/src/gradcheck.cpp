#include "peka/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "peka/error.hpp"

namespace peka {
namespace {

double evaluate(const LossBuilder& loss, std::span<Matrix* const> params, std::vector<Matrix>* grads) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (Matrix* p : params) leaves.push_back(tape.parameter(*p));
  Var out = loss(tape, leaves);
  if (out.rows() != 1 || out.cols() != 1) fail(ErrorCode::shape_mismatch, "gradient check: loss must be scalar");
  if (grads) {
    tape.backward(out);
    grads->clear();
    for (const Var& l : leaves) grads->push_back(l.grad());
  }
  return out.value()(0, 0);
}

}  // namespace

GradCheckReport finite_difference_check(const LossBuilder& loss, std::span<Matrix* const> params,
                                        double h, double tol, double abs_floor) {
  if (!(h > 0.0)) fail(ErrorCode::invalid_config, "gradient check: step must be positive");
  std::vector<Matrix> analytic;
  evaluate(loss, params, &analytic);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& p = *params[pi];
    for (std::size_t r = 0; r < p.rows(); ++r) {
      for (std::size_t c = 0; c < p.cols(); ++c) {
        const double orig = p(r, c);
        p(r, c) = orig + h;
        const double fp = evaluate(loss, params, nullptr);
        p(r, c) = orig - h;
        const double fm = evaluate(loss, params, nullptr);
        p(r, c) = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[pi](r, c);
        const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
        const double rel = std::abs(a - numeric) / denom;
        ++report.coords_checked;
        if (rel > report.max_rel_error || !std::isfinite(rel)) {
          report.max_rel_error = rel;
          report.param_index = pi;
          report.row = r;
          report.col = c;
          report.analytic = a;
          report.numeric = numeric;
        }
      }
    }
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error < tol;
  return report;
}

}  // namespace peka
