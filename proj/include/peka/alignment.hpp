#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "peka/adapters.hpp"
#include "peka/data.hpp"
#include "peka/encoders.hpp"
#include "peka/tape.hpp"

namespace peka {

struct AlignmentConfig {
  double lambda1 = 0.5;  // weight of the distillation term
  double lambda2 = 0.5;  // weight of the structure term
  double tau = 1.0;
  std::size_t clusters = 10;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  std::uint64_t seed = 7;
  std::size_t projector_hidden = 64;

  void validate() const;
};

struct AdapterConfig {
  AdapterKind kind = AdapterKind::bone;
  std::vector<std::string> targets;  // empty: every dense layer
  std::size_t block_size = 4;
  std::size_t lora_rank = 8;
  double lora_alpha = 32.0;
  double lora_dropout = 0.1;
  std::size_t adalora_rank = 8;
  std::size_t adalora_target_rank = 4;
  double adalora_ortho_weight = 0.1;
  double importance_decay = 0.85;
};

/// Attaches the configured adapter kind. AdaLoRA gets a two-stage pruning
/// schedule reaching the target rank at two thirds of `total_steps`.
AdapterSet attach_adapters(const StudentBackbone& backbone, const AdapterConfig& cfg, std::uint64_t seed,
                           std::uint64_t total_steps);

struct PseudoLabels {
  std::vector<std::size_t> labels;
  Matrix centroids;  // C x d
};

/// k-means (k-means++ seeding, <= 100 Lloyd iterations, stop when every
/// centroid moves less than 1e-6) with nearest-centroid assignment; ties go to
/// the lowest centroid index.
PseudoLabels build_pseudo_labels(const Matrix& teacher_emb, std::size_t clusters, std::uint64_t seed);

/// Mean over rows of KL(softmax(teacher/tau) || softmax(student/tau)); the
/// teacher side is a constant.
Var kd_loss_from_logits(Var student_logits, const Matrix& teacher_logits, double tau);
Var kd_loss(ParamBinder& binder, Var student_emb, const Projector& projector, const Matrix& teacher_emb, double tau);
Var struct_loss(ParamBinder& binder, Var student_emb, const ClassifierHead& classifier,
                std::span<const std::size_t> labels);
Var total_loss(Var kd, Var structure, double lambda1, double lambda2);
double total_loss(double kd, double structure, double lambda1, double lambda2);

struct EpochRecord {
  double kd = 0.0;
  double structure = 0.0;
  double total = 0.0;
};

struct AlignedModel {
  StudentBackbone backbone;
  AdapterSet adapters;
  Projector projector;
  ClassifierHead classifier;
  AlignmentConfig config;
  AdapterConfig adapter_config;
  std::vector<EpochRecord> history;

  /// Student embeddings (merged weights), optionally mapped through the projector.
  Matrix embed(const Matrix& img, bool projected = false) const;
  std::string history_csv() const;
};

struct BatchObjective {
  Var objective;  // weighted sum plus any adapter-internal penalty
  Var kd;
  Var structure;
};

/// Records the full training objective for one batch on the binder's tape.
BatchObjective alignment_objective(ParamBinder& binder, const StudentBackbone& backbone, const AdapterSet& adapters,
                                   const Projector& projector, const ClassifierHead& classifier,
                                   const Matrix& img_batch, const Matrix& teacher_batch,
                                   std::span<const std::size_t> labels, const AlignmentConfig& cfg,
                                   const AdapterConfig& adapter_cfg, const ForwardMode& mode);

/// Knowledge-transfer stage: only adapters, projector and classifier are
/// updated; the backbone and teacher stay frozen.
AlignedModel train_alignment(const StudentBackbone& backbone, const TeacherModel& teacher,
                             const PairedDataset& dataset, const AdapterConfig& adapter_cfg,
                             const AlignmentConfig& cfg);

/// Same as train_alignment, given teacher embeddings of every sample computed
/// up front (the teacher itself is not consulted again).
AlignedModel train_alignment_precomputed(const StudentBackbone& backbone, const Matrix& teacher_emb,
                                         const Matrix& img, const AdapterConfig& adapter_cfg,
                                         const AlignmentConfig& cfg);

}  // namespace peka
