#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "peka/matrix.hpp"

namespace peka {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Define-by-run record of matrix operations. Nodes are appended in creation
/// order, which is a topological order, so backward walks them in reverse.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var leaf(Matrix value, bool requires_grad);
  Var constant(Matrix value) { return leaf(std::move(value), false); }
  Var parameter(Matrix value) { return leaf(std::move(value), true); }

  Var record(Matrix value, std::vector<std::size_t> parents, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be 1x1.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  /// Zero for nodes with no path to the loss.
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulates into the gradient of `id`; no-op for nodes that need no grad.
  void accumulate(std::size_t id, const Matrix& g);
  const Matrix& upstream(std::size_t id) const { return nodes_[id].grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

  /// Node ids in the order the last backward() visited them.
  const std::vector<std::size_t>& visit_order() const { return visit_order_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

/// Maps model matrices onto tape leaves for one forward pass. Matrices
/// registered as trainable become gradient-carrying leaves; anything else is
/// recorded as a constant. Each matrix is bound at most once per tape.
class ParamBinder {
 public:
  explicit ParamBinder(Tape& tape) : tape_(&tape) {}
  void mark_trainable(const Matrix& m) { trainable_.push_back(&m); }
  Var bind(const Matrix& m);
  /// Binds `m` to an existing leaf, e.g. one created by a gradient checker.
  void adopt(const Matrix& m, Var leaf);
  /// Leaf bound to `m`, if it was bound during this pass.
  const Var* find(const Matrix& m) const;
  Tape& tape() { return *tape_; }

 private:
  Tape* tape_;
  std::vector<const Matrix*> trainable_;
  std::vector<std::pair<const Matrix*, Var>> bound_;
};

namespace ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a (n x c) + row (1 x c) broadcast over rows.
Var add_row(Var a, Var row);
/// a (n x c) * row (1 x c) broadcast over rows.
Var mul_row(Var a, Var row);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var transpose(Var a);
Var gelu(Var a);
Var tanh(Var a);
Var sum(Var a);
Var mean(Var a);
Var log_softmax(Var logits, double tau);
Var softmax(Var logits, double tau);
/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const std::size_t> labels);
/// Block-affine delta: for each b x b tile (i, j) of w, w_tile(i,j) * B_j + B_j,
/// where B_j is columns [j*b, (j+1)*b) of `blocks` (b x cols).
Var bone_delta(const Matrix& w, Var blocks, std::size_t block_size);

}  // namespace ops

/// Plain (tape-free) block-affine delta with the same tiling as ops::bone_delta.
Matrix bone_delta_value(const Matrix& w, const Matrix& blocks, std::size_t block_size);

double gelu_value(double x);

}  // namespace peka
