#include "peka/optim.hpp"

#include <cmath>

#include "peka/error.hpp"

namespace peka {

AdamState AdamState::for_param(const Matrix& param) {
  AdamState s;
  s.m = Matrix(param.rows(), param.cols());
  s.v = Matrix(param.rows(), param.cols());
  return s;
}

void adam_step(Matrix& param, const Matrix& grad, AdamState& state, double lr) {
  check_same_shape(param, grad, "adam_step");
  if (state.m.empty() && state.v.empty() && !param.empty()) {
    state.m = Matrix(param.rows(), param.cols());
    state.v = Matrix(param.rows(), param.cols());
  }
  check_same_shape(param, state.m, "adam_step (first moment)");
  check_same_shape(param, state.v, "adam_step (second moment)");
  if (!(lr > 0.0)) fail(ErrorCode::invalid_config, "adam_step: learning rate must be positive");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  auto p = param.data();
  auto g = grad.data();
  auto m = state.m.data();
  auto v = state.v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace peka
