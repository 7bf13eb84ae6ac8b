#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "peka/matrix.hpp"
#include "peka/tape.hpp"

namespace peka {

struct AdapterSet;

enum class Activation { identity, gelu, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
  std::string name;
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

/// Frozen stand-in for the imaging foundation model. Weights are never
/// modified after construction; adaptation goes through an AdapterSet.
struct StudentBackbone {
  std::vector<DenseLayer> layers;

  std::size_t d_in() const { return layers.front().in_dim(); }
  std::size_t d_emb() const { return layers.back().out_dim(); }
  const DenseLayer& layer(const std::string& name) const;
  std::vector<std::string> layer_names() const;
  /// Number of weight-matrix entries (biases excluded).
  std::size_t weight_count() const;
};

/// Frozen stand-in for the expression foundation model.
struct TeacherModel {
  std::vector<DenseLayer> layers;

  std::size_t n_genes() const { return layers.front().in_dim(); }
  std::size_t d_emb() const { return layers.back().out_dim(); }
};

/// Two dense layers mapping student embeddings into the teacher's space.
struct Projector {
  DenseLayer hidden;
  DenseLayer output;
};

/// Maps student embeddings to pseudo-label logits.
struct ClassifierHead {
  DenseLayer layer;
};

/// Seeded Kaiming-normal weights, uniform(+-1/sqrt(fan_in)) biases. Hidden
/// layers use GELU, the output layer is linear.
StudentBackbone init_student(std::uint64_t seed, std::size_t d_in, const std::vector<std::size_t>& hidden,
                             std::size_t d_emb);
TeacherModel init_teacher(std::uint64_t seed, std::size_t n_genes, const std::vector<std::size_t>& hidden,
                          std::size_t d_emb);
Projector init_projector(std::uint64_t seed, std::size_t d_emb_s, std::size_t hidden, std::size_t d_emb_t);
ClassifierHead init_classifier(std::uint64_t seed, std::size_t d_emb_s, std::size_t classes);

struct ForwardMode {
  bool training = false;
  std::mt19937_64* dropout_rng = nullptr;  // required when training with LoRA dropout
};

/// Student forward with optional adapters: each adapted layer computes
/// x W + x dW + b. Without adapters this is the plain frozen forward.
Matrix forward_student(const StudentBackbone& backbone, const AdapterSet* adapters, const Matrix& batch);
Var forward_student(ParamBinder& binder, const StudentBackbone& backbone, const AdapterSet* adapters, Var batch,
                    const ForwardMode& mode = {});

/// Teacher embeddings; never recorded on a tape.
Matrix forward_teacher(const TeacherModel& teacher, const Matrix& expr);

Var forward_dense(ParamBinder& binder, const DenseLayer& layer, Var x);
Var forward_projector(ParamBinder& binder, const Projector& projector, Var student_emb);
Matrix forward_projector(const Projector& projector, const Matrix& student_emb);
Var forward_classifier(ParamBinder& binder, const ClassifierHead& head, Var student_emb);

Var apply_activation(Activation a, Var x);
Matrix apply_activation(Activation a, const Matrix& x);

}  // namespace peka
