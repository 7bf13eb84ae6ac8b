#include "peka/encoders.hpp"

#include <cmath>

#include "peka/adapters.hpp"
#include "peka/error.hpp"
#include "peka/random.hpp"

namespace peka {
namespace {

DenseLayer make_dense(Rng& rng, std::string name, std::size_t in, std::size_t out, Activation act) {
  if (in == 0 || out == 0) fail(ErrorCode::invalid_config, "layer '" + name + "' has a zero dimension");
  DenseLayer l;
  l.name = std::move(name);
  l.weight = gaussian_matrix(rng, in, out, std::sqrt(2.0 / static_cast<double>(in)));
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  l.bias = uniform_matrix(rng, 1, out, -bound, bound);
  l.activation = act;
  return l;
}

std::vector<DenseLayer> make_mlp(Rng& rng, const std::string& prefix, std::size_t d_in,
                                 const std::vector<std::size_t>& hidden, std::size_t d_out) {
  std::vector<DenseLayer> layers;
  std::size_t prev = d_in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers.push_back(make_dense(rng, prefix + std::to_string(i), prev, hidden[i], Activation::gelu));
    prev = hidden[i];
  }
  layers.push_back(make_dense(rng, prefix + std::to_string(hidden.size()), prev, d_out, Activation::identity));
  return layers;
}

Matrix dense_value(const DenseLayer& l, const Matrix& x) {
  Matrix h = matmul(x, l.weight);
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) += l.bias(0, j);
  return apply_activation(l.activation, h);
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::gelu: return "gelu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "gelu") return Activation::gelu;
  if (s == "tanh") return Activation::tanh;
  fail(ErrorCode::format, "unknown activation '" + s + "'");
}

const DenseLayer& StudentBackbone::layer(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  fail(ErrorCode::invalid_config, "backbone has no layer named '" + name + "'");
}

std::vector<std::string> StudentBackbone::layer_names() const {
  std::vector<std::string> names;
  for (const auto& l : layers) names.push_back(l.name);
  return names;
}

std::size_t StudentBackbone::weight_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size();
  return n;
}

StudentBackbone init_student(std::uint64_t seed, std::size_t d_in, const std::vector<std::size_t>& hidden,
                             std::size_t d_emb) {
  Rng rng(seed);
  return StudentBackbone{make_mlp(rng, "dense", d_in, hidden, d_emb)};
}

TeacherModel init_teacher(std::uint64_t seed, std::size_t n_genes, const std::vector<std::size_t>& hidden,
                          std::size_t d_emb) {
  Rng rng(seed);
  return TeacherModel{make_mlp(rng, "teacher", n_genes, hidden, d_emb)};
}

Projector init_projector(std::uint64_t seed, std::size_t d_emb_s, std::size_t hidden, std::size_t d_emb_t) {
  Rng rng(seed);
  Projector p;
  p.hidden = make_dense(rng, "proj_hidden", d_emb_s, hidden, Activation::gelu);
  p.output = make_dense(rng, "proj_out", hidden, d_emb_t, Activation::identity);
  return p;
}

ClassifierHead init_classifier(std::uint64_t seed, std::size_t d_emb_s, std::size_t classes) {
  Rng rng(seed);
  return ClassifierHead{make_dense(rng, "classifier", d_emb_s, classes, Activation::identity)};
}

Var apply_activation(Activation a, Var x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::gelu: return ops::gelu(x);
    case Activation::tanh: return ops::tanh(x);
  }
  return x;
}

Matrix apply_activation(Activation a, const Matrix& x) {
  Matrix out = x;
  switch (a) {
    case Activation::identity: break;
    case Activation::gelu:
      for (double& v : out.data()) v = gelu_value(v);
      break;
    case Activation::tanh:
      for (double& v : out.data()) v = std::tanh(v);
      break;
  }
  return out;
}

Var forward_dense(ParamBinder& binder, const DenseLayer& layer, Var x) {
  Var h = ops::matmul(x, binder.bind(layer.weight));
  h = ops::add_row(h, binder.bind(layer.bias));
  return apply_activation(layer.activation, h);
}

Var forward_student(ParamBinder& binder, const StudentBackbone& backbone, const AdapterSet* adapters, Var batch,
                    const ForwardMode& mode) {
  if (batch.cols() != backbone.d_in())
    fail(ErrorCode::shape_mismatch, "forward_student: batch width " + std::to_string(batch.cols()) +
                                        " != d_in " + std::to_string(backbone.d_in()));
  Var x = batch;
  for (const auto& layer : backbone.layers) {
    Var h = ops::matmul(x, binder.bind(layer.weight));
    if (adapters) {
      if (const Adapter* a = adapters->find(layer.name)) h = ops::add(h, adapter_path(binder, *a, layer.weight, x, mode));
    }
    h = ops::add_row(h, binder.bind(layer.bias));
    x = apply_activation(layer.activation, h);
  }
  return x;
}

Matrix forward_student(const StudentBackbone& backbone, const AdapterSet* adapters, const Matrix& batch) {
  if (batch.cols() != backbone.d_in())
    fail(ErrorCode::shape_mismatch, "forward_student: batch width " + std::to_string(batch.cols()) +
                                        " != d_in " + std::to_string(backbone.d_in()));
  if (!adapters || adapters->adapters.empty()) {
    Matrix x = batch;
    for (const auto& layer : backbone.layers) x = dense_value(layer, x);
    return x;
  }
  Tape tape;
  ParamBinder binder(tape);
  Var out = forward_student(binder, backbone, adapters, tape.constant(batch), ForwardMode{});
  return out.value();
}

Matrix forward_teacher(const TeacherModel& teacher, const Matrix& expr) {
  if (expr.cols() != teacher.n_genes())
    fail(ErrorCode::shape_mismatch, "forward_teacher: expression width " + std::to_string(expr.cols()) +
                                        " != n_genes " + std::to_string(teacher.n_genes()));
  Matrix x = expr;
  for (const auto& layer : teacher.layers) x = dense_value(layer, x);
  return x;
}

Var forward_projector(ParamBinder& binder, const Projector& projector, Var student_emb) {
  return forward_dense(binder, projector.output, forward_dense(binder, projector.hidden, student_emb));
}

Matrix forward_projector(const Projector& projector, const Matrix& student_emb) {
  return dense_value(projector.output, dense_value(projector.hidden, student_emb));
}

Var forward_classifier(ParamBinder& binder, const ClassifierHead& head, Var student_emb) {
  return forward_dense(binder, head.layer, student_emb);
}

}  // namespace peka
