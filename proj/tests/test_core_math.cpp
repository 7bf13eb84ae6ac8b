#include <cmath>
#include <vector>

#include "peka/gradcheck.hpp"
#include "peka/linalg.hpp"
#include "peka/optim.hpp"
#include "peka/tape.hpp"
#include "support.hpp"

using namespace peka;
using testing::Gen;

namespace {

// Leading right singular vector by power iteration on XᵀX.
std::vector<double> power_iteration(const Matrix& x, double* sigma) {
  const Matrix g = matmul(transpose(x), x);
  std::vector<double> v(g.rows(), 1.0);
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> w(g.rows(), 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) w[i] += g(i, j) * v[j];
    double n = 0.0;
    for (double a : w) n += a * a;
    n = std::sqrt(n);
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / n;
  }
  double rq = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) rq += v[i] * g(i, j) * v[j];
  *sigma = std::sqrt(rq);
  return v;
}

Matrix reconstruct(const ThinSvd& s) {
  Matrix us = s.u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= s.s[j];
  return matmul(us, transpose(s.v));
}

double orthonormality_error(const Matrix& q) {
  return max_abs_diff(matmul(transpose(q), q), Matrix::identity(q.cols()));
}

}  // namespace

TEST_CASE("matmul examples") {
  const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(Matrix::identity(2), m) == m);
  CHECK(matmul(Matrix::from_rows({{1, 0}, {0, 1}}), Matrix::from_rows({{0, 1}, {0, 0}})) ==
        Matrix::from_rows({{0, 1}, {0, 0}}));
  const Matrix c = matmul(m, Matrix::from_rows({{5}, {6}}));
  CHECK(c == testing::naive_matmul(m, Matrix::from_rows({{5}, {6}})));
  CHECK(c == Matrix::from_rows({{17}, {39}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const std::string msg = testing::error_message_of([] { matmul(Matrix(2, 3), Matrix(2, 3)); });
  CHECK(msg.find("2x3") != std::string::npos);
  CHECK(testing::error_code_of([] { matmul(Matrix(2, 3), Matrix(2, 3)); }) == ErrorCode::shape_mismatch);
}

TEST_CASE("matrix construction rejects ragged and non-finite input") {
  CHECK(testing::error_code_of([] { Matrix::from_rows({{1, 2}, {3}}); }) == ErrorCode::shape_mismatch);
  CHECK_THROWS_AS(Matrix::from_rows({{1, NAN}}), Error);
  CHECK_THROWS_AS(Matrix::from_data(2, 2, {1, 2, 3}), Error);
  CHECK_THROWS_AS(Matrix::from_data(1, 1, {INFINITY}), Error);
}

TEST_CASE("matmul agrees with the reference loop") {
  testing::for_seeds(20, [](Gen& g) {
    const std::size_t n = g.index(1, 7), k = g.index(1, 7), m = g.index(1, 7);
    const Matrix a = g.matrix(n, k), b = g.matrix(k, m);
    CHECK(testing::max_abs(matmul(a, b), testing::naive_matmul(a, b)) < 1e-12);
  });
}

TEST_CASE("softmax with temperature examples") {
  const Matrix flat = softmax_with_temperature(Matrix::from_rows({{2.5, 2.5, 2.5}}), 0.3);
  for (double x : flat.data()) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const double e = std::exp(1.0);
  const Matrix s = softmax_with_temperature(Matrix::from_rows({{1, 0}}), 1.0);
  CHECK(s(0, 0) == doctest::Approx(e / (e + 1)).epsilon(1e-14));
  CHECK(s(0, 1) == doctest::Approx(1 / (e + 1)).epsilon(1e-14));
  CHECK(s(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));

  const Matrix hot = softmax_with_temperature(Matrix::from_rows({{1, 0}}), 1e6);
  CHECK(std::abs(hot(0, 0) - 0.5) < 1e-5);
  CHECK(std::abs(hot(0, 1) - 0.5) < 1e-5);

  CHECK(testing::error_code_of([] { softmax_with_temperature(Matrix(1, 2), 0.0); }) == ErrorCode::invalid_config);
  CHECK_THROWS(softmax_with_temperature(Matrix(1, 2), -1.0));
}

TEST_CASE("softmax rows sum to one for large logits") {
  testing::for_seeds(30, [](Gen& g) {
    const Matrix logits = g.matrix(g.index(1, 6), g.index(2, 9), 1e3 / 3);
    Matrix clipped = logits;
    for (double& x : clipped.data()) x = std::clamp(x, -1e3, 1e3);
    const Matrix s = softmax_with_temperature(clipped, g.uniform(0.05, 5.0));
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double sum = 0.0;
      for (double x : s.row(i)) {
        CHECK(std::isfinite(x));
        sum += x;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  });
}

TEST_CASE("kl divergence examples") {
  const Matrix p = Matrix::from_rows({{0.3, 0.7}, {0.5, 0.5}});
  CHECK(kl_divergence(p, p) == 0.0);

  // Exact softmax pair so the log ratio is exactly one.
  const double a = std::exp(1.0) / (std::exp(1.0) + 1), b = 1 - a;
  const double kl = kl_divergence(Matrix::from_rows({{a, b}}), Matrix::from_rows({{b, a}}));
  CHECK(kl == doctest::Approx(a * 1.0 + b * -1.0).epsilon(1e-12));
  CHECK(kl == doctest::Approx(0.4621).epsilon(1e-4));

  CHECK(kl_divergence(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0.5, 0.5}})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("kl divergence errors") {
  CHECK(testing::error_code_of([] { kl_divergence(Matrix(1, 2, 0.5), Matrix(1, 3, 1.0 / 3)); }) ==
        ErrorCode::shape_mismatch);
  CHECK(testing::error_code_of([] {
          kl_divergence(Matrix::from_rows({{0.5, 0.5}}), Matrix::from_rows({{1.0, 0.0}}));
        }) == ErrorCode::numeric);
  // Zero in q is fine where p is zero too.
  CHECK(kl_divergence(Matrix::from_rows({{1.0, 0.0}}), Matrix::from_rows({{1.0, 0.0}})) == 0.0);
}

TEST_CASE("kl is non-negative and zero only for identical rows") {
  testing::for_seeds(40, [](Gen& g) {
    const std::size_t r = g.index(1, 5), c = g.index(2, 6);
    const Matrix p = g.stochastic(r, c), q = g.stochastic(r, c);
    CHECK(kl_divergence(p, q) > 1e-12);
    CHECK(kl_divergence(p, p) < 1e-12);
    // Mean over rows, so duplicating the batch leaves it unchanged.
    Matrix p2(2 * r, c), q2(2 * r, c);
    for (std::size_t i = 0; i < 2 * r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        p2(i, j) = p(i % r, j);
        q2(i, j) = q(i % r, j);
      }
    CHECK(kl_divergence(p2, q2) == doctest::Approx(kl_divergence(p, q)).epsilon(1e-12));
  });
}

TEST_CASE("svd examples") {
  Matrix d(3, 3);
  d(0, 0) = 3;
  d(1, 1) = 2;
  d(2, 2) = 1;
  const ThinSvd s = svd_thin(d, 2);
  REQUIRE(s.s.size() == 2);
  CHECK(s.s[0] == doctest::Approx(3));
  CHECK(s.s[1] == doctest::Approx(2));
  CHECK(std::abs(std::abs(s.v(0, 0)) - 1) < 1e-12);
  CHECK(std::abs(std::abs(s.v(1, 1)) - 1) < 1e-12);
  CHECK(std::abs(s.v(2, 0)) < 1e-12);

  Gen g(5);
  Matrix u = g.matrix(6, 1), v = g.matrix(4, 1);
  u = scale(u, 1 / frobenius_norm(u));
  v = scale(v, 1 / frobenius_norm(v));
  const ThinSvd r1 = svd_thin(scale(matmul(u, transpose(v)), 5.0), 1);
  CHECK(r1.s[0] == doctest::Approx(5.0).epsilon(1e-12));

  const Matrix x = g.matrix(20, 8);
  CHECK(frobenius_norm(sub(x, reconstruct(svd_thin(x, 8)))) < 1e-8);

  CHECK(testing::error_code_of([&] { svd_thin(x, 9); }) == ErrorCode::invalid_config);
  CHECK_THROWS(svd_thin(x, 0));
}

TEST_CASE("svd leading triplet matches power iteration") {
  testing::for_seeds(10, [](Gen& g) {
    const Matrix x = g.matrix(g.index(4, 15), g.index(2, 6));
    double sigma = 0.0;
    const std::vector<double> v = power_iteration(x, &sigma);
    const ThinSvd s = svd_thin(x, 1);
    CHECK(s.s[0] == doctest::Approx(sigma).epsilon(1e-8));
    double dot = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * s.v(i, 0);
    CHECK(std::abs(std::abs(dot) - 1.0) < 1e-6);
  });
}

TEST_CASE("svd orthonormality, ordering and reconstruction monotonicity") {
  testing::for_seeds(15, [](Gen& g) {
    const std::size_t r = g.index(2, 14), c = g.index(2, 14);
    const Matrix x = g.matrix(r, c);
    const std::size_t kmax = std::min(r, c);
    double prev_err = INFINITY;
    for (std::size_t k = 1; k <= kmax; ++k) {
      const ThinSvd s = svd_thin(x, k);
      CHECK(orthonormality_error(s.u) < 1e-8);
      CHECK(orthonormality_error(s.v) < 1e-8);
      for (std::size_t i = 0; i < k; ++i) {
        CHECK(s.s[i] >= 0);
        if (i) CHECK(s.s[i] <= s.s[i - 1]);
      }
      const double err = frobenius_norm(sub(x, reconstruct(s)));
      CHECK(err <= prev_err + 1e-10);
      prev_err = err;
    }
    CHECK(prev_err < 1e-8);
  });
}

TEST_CASE("adam examples") {
  Matrix p = Matrix::from_rows({{1.5, -2.0}});
  const Matrix p0 = p;
  AdamState st = AdamState::for_param(p);
  adam_step(p, Matrix(1, 2), st, 0.1);
  CHECK(p == p0);
  CHECK(st.t == 1);

  Matrix q = Matrix::from_rows({{1.0}});
  AdamState qs = AdamState::for_param(q);
  adam_step(q, Matrix::from_rows({{1.0}}), qs, 0.1);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  CHECK(q(0, 0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(q(0, 0) == doctest::Approx(0.9).epsilon(1e-7));
  const double after_one = q(0, 0);
  adam_step(q, Matrix::from_rows({{1.0}}), qs, 0.1);
  CHECK(q(0, 0) < after_one);
  CHECK(qs.t == 2);

  CHECK(testing::error_code_of([&] { adam_step(q, Matrix(2, 1), qs, 0.1); }) == ErrorCode::shape_mismatch);
  CHECK_THROWS(adam_step(q, Matrix(1, 1), qs, 0.0));
}

TEST_CASE("adam matches a scalar reference and is deterministic") {
  testing::for_seeds(10, [](Gen& g) {
    Matrix p = g.matrix(3, 2), p2 = p;
    AdamState a = AdamState::for_param(p), b = AdamState::for_param(p2);
    std::vector<double> m(6, 0.0), v(6, 0.0), ref(p.data().begin(), p.data().end());
    for (int step = 1; step <= 5; ++step) {
      const Matrix grad = g.matrix(3, 2);
      adam_step(p, grad, a, 0.01);
      adam_step(p2, grad, b, 0.01);
      for (std::size_t i = 0; i < 6; ++i) {
        m[i] = 0.9 * m[i] + 0.1 * grad.data()[i];
        v[i] = 0.999 * v[i] + 0.001 * grad.data()[i] * grad.data()[i];
        const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
        ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      }
    }
    CHECK(p == p2);
    for (std::size_t i = 0; i < 6; ++i) CHECK(p.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    CHECK(a.t == 5);
  });
}

TEST_CASE("matmul backward identity") {
  testing::for_seeds(10, [](Gen& g) {
    const Matrix a = g.matrix(3, 4), b = g.matrix(4, 2);
    Tape t;
    Var va = t.parameter(a), vb = t.parameter(b);
    t.backward(ops::sum(ops::matmul(va, vb)));
    CHECK(va.grad() == matmul(Matrix(3, 2, 1.0), transpose(b)));
    CHECK(vb.grad() == matmul(transpose(a), Matrix(3, 2, 1.0)));
  });
}

TEST_CASE("tape visits nodes in reverse order and leaves unrelated grads at zero") {
  Tape t;
  Var a = t.parameter(Matrix::from_rows({{1, 2}}));
  Var unrelated = t.parameter(Matrix::from_rows({{3, 4}}));
  Var b = ops::scale(a, 2.0);
  Var c = ops::tanh(b);
  Var loss = ops::sum(c);
  Var after = ops::scale(unrelated, 3.0);  // recorded after the loss
  t.backward(loss);
  const auto& order = t.visit_order();
  for (std::size_t i = 1; i < order.size(); ++i) CHECK(order[i] < order[i - 1]);
  CHECK(unrelated.grad() == Matrix(1, 2));
  CHECK(after.grad() == Matrix(1, 2));
  CHECK(a.grad()(0, 0) == doctest::Approx(2 * (1 - std::pow(std::tanh(2.0), 2))));
  CHECK_THROWS(t.backward(c));  // not a scalar
}

TEST_CASE("finite difference check: quadratic") {
  Matrix theta = Matrix::from_rows({{3, 4}});
  Matrix* params[] = {&theta};
  const GradCheckReport r = finite_difference_check(
      [](Tape&, std::span<const Var> p) { return ops::scale(ops::sum(ops::hadamard(p[0], p[0])), 0.5); }, params,
      1e-5, 1e-8);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.coords_checked == 2);
  CHECK(theta == Matrix::from_rows({{3, 4}}));

  Tape t;
  Var v = t.parameter(theta);
  t.backward(ops::scale(ops::sum(ops::hadamard(v, v)), 0.5));
  CHECK(v.grad() == theta);
}

TEST_CASE("finite difference check: distillation loss on two logits") {
  const Matrix teacher = softmax_with_temperature(Matrix::from_rows({{0.4, -1.1}, {2.0, 0.3}}), 1.0);
  Matrix log_teacher = teacher;
  for (double& x : log_teacher.data()) x = std::log(x);
  Matrix student = Matrix::from_rows({{0.1, 0.9}, {-0.5, 0.2}});
  Matrix* params[] = {&student};
  const auto loss = [&](Tape& t, std::span<const Var> p) {
    Var diff = ops::sub(t.constant(log_teacher), ops::log_softmax(p[0], 2.0));
    return ops::scale(ops::sum(ops::hadamard(t.constant(teacher), diff)), 0.5);
  };
  const GradCheckReport r = finite_difference_check(loss, params, 1e-5, 1e-5);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("finite difference check reports a wrong gradient") {
  Matrix theta = Matrix::from_rows({{1.0, -2.0}});
  Matrix* params[] = {&theta};
  // Backward deliberately doubled.
  const auto broken = [](Tape& t, std::span<const Var> p) {
    Var x = p[0];
    Matrix v(1, 1, x.value()(0, 0) * x.value()(0, 0) + x.value()(0, 1));
    return t.record(std::move(v), {x.id}, [x](Tape& tape, std::size_t self) {
      const double up = tape.upstream(self)(0, 0);
      tape.accumulate(x.id, Matrix::from_rows({{up * 4 * x.value()(0, 0), up}}));
    });
  };
  const GradCheckReport r = finite_difference_check(broken, params, 1e-5, 1e-4);
  CHECK_FALSE(r.passed);
  CHECK(r.col == 0);
  CHECK(r.analytic == doctest::Approx(4.0));
  CHECK(r.numeric == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("elementwise ops pass gradient checks") {
  testing::for_seeds(5, [](Gen& g) {
    Matrix a = g.matrix(3, 4), b = g.matrix(3, 4), row = g.matrix(1, 4), w = g.matrix(4, 2);
    Matrix* params[] = {&a, &b, &row, &w};
    const std::size_t labels[] = {0, 1, 1};
    const auto loss = [&](Tape&, std::span<const Var> p) {
      Var h = ops::gelu(ops::add_row(ops::hadamard(p[0], p[1]), p[2]));
      Var z = ops::tanh(ops::mul_row(ops::sub(h, p[1]), p[2]));
      Var logits = ops::matmul(z, p[3]);
      Var ce = ops::cross_entropy(logits, labels);
      Var sm = ops::mean(ops::softmax(ops::transpose(logits), 0.7));
      return ops::add(ce, ops::add(sm, ops::mean(ops::hadamard(z, z))));
    };
    const GradCheckReport r = finite_difference_check(loss, params, 1e-5, 1e-6);
    CHECK(r.passed);
  });
}
