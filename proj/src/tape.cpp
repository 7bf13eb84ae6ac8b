#include "peka/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "peka/error.hpp"

namespace peka {

const Matrix& Var::value() const { return tape->value(id); }
const Matrix& Var::grad() const { return tape->grad(id); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.grad = Matrix(value.rows(), value.cols());
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::vector<std::size_t> parents, Backward backward) {
  Node n;
  n.grad = Matrix(value.rows(), value.cols());
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [this](std::size_t p) { return nodes_[p].requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  n.parents = std::move(parents);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  add_inplace(n.grad, g);
}

void Tape::backward(Var loss) {
  if (loss.tape != this) fail(ErrorCode::internal, "backward: variable belongs to another tape");
  const Matrix& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1)
    fail(ErrorCode::shape_mismatch, "backward: loss must be 1x1, got " + lv.shape_string());
  for (auto& n : nodes_) std::fill(n.grad.data().begin(), n.grad.data().end(), 0.0);
  visit_order_.clear();
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    visit_order_.push_back(i);
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
}

Var ParamBinder::bind(const Matrix& m) {
  if (const Var* v = find(m)) return *v;
  const bool train = std::find(trainable_.begin(), trainable_.end(), &m) != trainable_.end();
  Var v = tape_->leaf(m, train);
  bound_.emplace_back(&m, v);
  return v;
}

void ParamBinder::adopt(const Matrix& m, Var leaf) {
  if (find(m)) fail(ErrorCode::internal, "matrix already bound on this tape");
  bound_.emplace_back(&m, leaf);
}

const Var* ParamBinder::find(const Matrix& m) const {
  for (const auto& [ptr, v] : bound_)
    if (ptr == &m) return &v;
  return nullptr;
}

namespace ops {
namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) fail(ErrorCode::internal, "variables from different tapes");
  return *a.tape;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Matrix out = peka::matmul(a.value(), b.value());
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.upstream(self);
    if (t.requires_grad(a)) t.accumulate(a, peka::matmul(g, peka::transpose(t.value(b))));
    if (t.requires_grad(b)) t.accumulate(b, peka::matmul(peka::transpose(t.value(a)), g));
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record(peka::add(a.value(), b.value()), {a.id, b.id},
                  [a = a.id, b = b.id](Tape& t, std::size_t self) {
                    t.accumulate(a, t.upstream(self));
                    t.accumulate(b, t.upstream(self));
                  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record(peka::sub(a.value(), b.value()), {a.id, b.id},
                  [a = a.id, b = b.id](Tape& t, std::size_t self) {
                    t.accumulate(a, t.upstream(self));
                    t.accumulate(b, peka::scale(t.upstream(self), -1.0));
                  });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols())
    fail(ErrorCode::shape_mismatch, "add_row: " + av.shape_string() + " + " + rv.shape_string());
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
  return t.record(std::move(out), {a.id, row.id}, [a = a.id, r = row.id](Tape& t, std::size_t self) {
    const Matrix& g = t.upstream(self);
    t.accumulate(a, g);
    if (t.requires_grad(r)) {
      Matrix gr(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
      t.accumulate(r, gr);
    }
  });
}

Var mul_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols())
    fail(ErrorCode::shape_mismatch, "mul_row: " + av.shape_string() + " * " + rv.shape_string());
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= rv(0, j);
  return t.record(std::move(out), {a.id, row.id}, [a = a.id, r = row.id](Tape& t, std::size_t self) {
    const Matrix& g = t.upstream(self);
    const Matrix& av = t.value(a);
    const Matrix& rv = t.value(r);
    if (t.requires_grad(a)) {
      Matrix ga = g;
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) *= rv(0, j);
      t.accumulate(a, ga);
    }
    if (t.requires_grad(r)) {
      Matrix gr(1, rv.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j) * av(i, j);
      t.accumulate(r, gr);
    }
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record(peka::hadamard(a.value(), b.value()), {a.id, b.id},
                  [a = a.id, b = b.id](Tape& t, std::size_t self) {
                    const Matrix& g = t.upstream(self);
                    if (t.requires_grad(a)) t.accumulate(a, peka::hadamard(g, t.value(b)));
                    if (t.requires_grad(b)) t.accumulate(b, peka::hadamard(g, t.value(a)));
                  });
}

Var scale(Var a, double s) {
  return a.tape->record(peka::scale(a.value(), s), {a.id}, [a = a.id, s](Tape& t, std::size_t self) {
    t.accumulate(a, peka::scale(t.upstream(self), s));
  });
}

Var transpose(Var a) {
  return a.tape->record(peka::transpose(a.value()), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    t.accumulate(a, peka::transpose(t.upstream(self)));
  });
}

Var gelu(Var a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = gelu_value(v);
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const Matrix& x = t.value(a);
    Matrix g = t.upstream(self);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double xv = x.data()[i];
      const double cdf = 0.5 * std::erfc(-xv / std::numbers::sqrt2);
      const double pdf = std::exp(-0.5 * xv * xv) / std::sqrt(2.0 * std::numbers::pi);
      g.data()[i] *= cdf + xv * pdf;
    }
    t.accumulate(a, g);
  });
}

Var tanh(Var a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    Matrix g = t.upstream(self);
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= 1.0 - y.data()[i] * y.data()[i];
    t.accumulate(a, g);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Matrix out(1, 1, s);
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const Matrix& x = t.value(a);
    t.accumulate(a, Matrix(x.rows(), x.cols(), t.upstream(self)(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), n > 0 ? 1.0 / n : 0.0);
}

Var log_softmax(Var logits, double tau) {
  Matrix out = log_softmax_with_temperature(logits.value(), tau);
  return logits.tape->record(std::move(out), {logits.id}, [a = logits.id, tau](Tape& t, std::size_t self) {
    // d/dx_j = (g_j - p_j * sum_k g_k) / tau
    const Matrix& ls = t.value(self);
    Matrix g = t.upstream(self);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto gr = g.row(i);
      double gs = 0.0;
      for (double v : gr) gs += v;
      for (std::size_t j = 0; j < gr.size(); ++j) gr[j] = (gr[j] - std::exp(ls(i, j)) * gs) / tau;
    }
    t.accumulate(a, g);
  });
}

Var softmax(Var logits, double tau) {
  Matrix out = softmax_with_temperature(logits.value(), tau);
  return logits.tape->record(std::move(out), {logits.id}, [a = logits.id, tau](Tape& t, std::size_t self) {
    const Matrix& p = t.value(self);
    Matrix g = t.upstream(self);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto gr = g.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < gr.size(); ++j) dot += gr[j] * p(i, j);
      for (std::size_t j = 0; j < gr.size(); ++j) gr[j] = p(i, j) * (gr[j] - dot) / tau;
    }
    t.accumulate(a, g);
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Matrix& z = logits.value();
  if (labels.size() != z.rows())
    fail(ErrorCode::shape_mismatch, "cross_entropy: " + std::to_string(labels.size()) +
                                        " labels for " + std::to_string(z.rows()) + " rows");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= z.cols())
      fail(ErrorCode::invalid_config, "cross_entropy: label " + std::to_string(labels[i]) +
                                          " out of range [0, " + std::to_string(z.cols()) + ")");
  }
  Matrix ls = log_softmax_with_temperature(z, 1.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) loss -= ls(i, labels[i]);
  const double n = static_cast<double>(std::max<std::size_t>(labels.size(), 1));
  loss /= n;
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return logits.tape->record(
      Matrix(1, 1, loss), {logits.id},
      [a = logits.id, ls = std::move(ls), lab = std::move(lab), n](Tape& t, std::size_t self) {
        const double up = t.upstream(self)(0, 0);
        Matrix g(ls.rows(), ls.cols());
        for (std::size_t i = 0; i < ls.rows(); ++i) {
          for (std::size_t j = 0; j < ls.cols(); ++j) g(i, j) = std::exp(ls(i, j));
          g(i, lab[i]) -= 1.0;
        }
        t.accumulate(a, peka::scale(g, up / n));
      });
}

Var bone_delta(const Matrix& w, Var blocks, std::size_t b) {
  Matrix out = bone_delta_value(w, blocks.value(), b);
  return blocks.tape->record(std::move(out), {blocks.id}, [w, blk = blocks.id, b](Tape& t, std::size_t self) {
    // dB_j = sum_i (W_tile(i,j)^T G_tile(i,j) + G_tile(i,j))
    const Matrix& g = t.upstream(self);
    Matrix gb(b, w.cols());
    for (std::size_t ti = 0; ti < w.rows() / b; ++ti) {
      for (std::size_t tj = 0; tj < w.cols() / b; ++tj) {
        const std::size_t r0 = ti * b, c0 = tj * b;
        for (std::size_t p = 0; p < b; ++p) {
          for (std::size_t q = 0; q < b; ++q) {
            double acc = g(r0 + p, c0 + q);
            for (std::size_t k = 0; k < b; ++k) acc += w(r0 + k, c0 + p) * g(r0 + k, c0 + q);
            gb(p, c0 + q) += acc;
          }
        }
      }
    }
    t.accumulate(blk, gb);
  });
}

}  // namespace ops

Matrix bone_delta_value(const Matrix& w, const Matrix& blocks, std::size_t b) {
  if (b == 0 || w.rows() % b != 0 || w.cols() % b != 0)
    fail(ErrorCode::shape_mismatch, "bone_delta: block size " + std::to_string(b) +
                                        " does not tile weight " + w.shape_string());
  if (blocks.rows() != b || blocks.cols() != w.cols())
    fail(ErrorCode::shape_mismatch, "bone_delta: blocks " + blocks.shape_string() +
                                        " do not match weight " + w.shape_string() +
                                        " with block size " + std::to_string(b));
  Matrix out(w.rows(), w.cols());
  for (std::size_t ti = 0; ti < w.rows() / b; ++ti) {
    for (std::size_t tj = 0; tj < w.cols() / b; ++tj) {
      const std::size_t r0 = ti * b, c0 = tj * b;
      for (std::size_t p = 0; p < b; ++p) {
        for (std::size_t q = 0; q < b; ++q) {
          double acc = blocks(p, c0 + q);
          for (std::size_t k = 0; k < b; ++k) acc += w(r0 + p, c0 + k) * blocks(k, c0 + q);
          out(r0 + p, c0 + q) = acc;
        }
      }
    }
  }
  return out;
}

double gelu_value(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace peka
