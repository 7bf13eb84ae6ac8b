#include "peka/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "peka/error.hpp"
#include "peka/optim.hpp"
#include "peka/random.hpp"

namespace peka {
namespace {

enum Stream : std::uint64_t { kLabels = 1, kProjector, kClassifier, kAdapters, kShuffle, kDropout };

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::size_t nearest(const Matrix& centroids, std::span<const double> x) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = sq_dist(centroids.row(c), x);
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  return best;
}

struct TrainableRef {
  std::string name;
  Matrix* value;
  AdamState state;
};

}  // namespace

void AlignmentConfig::validate() const {
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda1 and lambda2 must be >= 0");
  require(lambda1 > 0.0 || lambda2 > 0.0, "lambda1 and lambda2 cannot both be zero");
  require(tau > 0.0, "tau must be > 0");
  require(clusters >= 2, "clusters must be >= 2");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr > 0.0, "lr must be > 0");
  require(projector_hidden >= 1, "projector_hidden must be >= 1");
}

AdapterSet attach_adapters(const StudentBackbone& backbone, const AdapterConfig& cfg, std::uint64_t seed,
                           std::uint64_t total_steps) {
  switch (cfg.kind) {
    case AdapterKind::none: return AdapterSet{};
    case AdapterKind::bone: return attach_bone(backbone, cfg.targets, cfg.block_size);
    case AdapterKind::lora:
      return attach_lora(backbone, cfg.targets, cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout, seed);
    case AdapterKind::adalora: {
      require(cfg.adalora_target_rank >= 1 && cfg.adalora_target_rank <= cfg.adalora_rank,
              "adalora target rank must lie in [1, initial rank]");
      std::vector<RankSchedule> schedule;
      const std::size_t mid = cfg.adalora_target_rank + (cfg.adalora_rank - cfg.adalora_target_rank) / 2;
      const std::uint64_t s1 = total_steps / 3, s2 = 2 * total_steps / 3;
      if (s1 >= 1 && s2 > s1) {
        if (mid < cfg.adalora_rank) schedule.push_back({s1, mid});
        if (cfg.adalora_target_rank < mid || schedule.empty()) schedule.push_back({s2, cfg.adalora_target_rank});
      }
      return attach_adalora(backbone, cfg.targets, cfg.adalora_rank, std::move(schedule), seed);
    }
  }
  return AdapterSet{};
}

PseudoLabels build_pseudo_labels(const Matrix& emb, std::size_t clusters, std::uint64_t seed) {
  const std::size_t n = emb.rows();
  const std::size_t d = emb.cols();
  if (clusters == 0) fail(ErrorCode::invalid_config, "build_pseudo_labels: need at least one cluster");
  if (n < clusters)
    fail(ErrorCode::invalid_config, "build_pseudo_labels: " + std::to_string(n) + " samples for " +
                                        std::to_string(clusters) + " clusters");
  Rng rng(seed);
  Matrix centroids(clusters, d);
  // k-means++ seeding
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  {
    auto src = emb.row(first(rng));
    std::copy(src.begin(), src.end(), centroids.row(0).begin());
  }
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < clusters; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], sq_dist(emb.row(i), centroids.row(c - 1)));
      total += dist[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist[i];
        if (acc > target && dist[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    auto src = emb.row(pick);
    std::copy(src.begin(), src.end(), centroids.row(c).begin());
  }

  PseudoLabels out;
  out.labels.assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < n; ++i) out.labels[i] = nearest(centroids, emb.row(i));
    Matrix next(clusters, d);
    std::vector<std::size_t> counts(clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = next.row(out.labels[i]);
      auto src = emb.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      ++counts[out.labels[i]];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < clusters; ++c) {
      if (counts[c] == 0) {
        auto keep = centroids.row(c);
        std::copy(keep.begin(), keep.end(), next.row(c).begin());
        continue;
      }
      for (double& v : next.row(c)) v /= double(counts[c]);
      shift = std::max(shift, std::sqrt(sq_dist(next.row(c), centroids.row(c))));
    }
    centroids = std::move(next);
    if (shift < 1e-6) break;
  }
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = nearest(centroids, emb.row(i));
  out.centroids = std::move(centroids);
  return out;
}

Var kd_loss_from_logits(Var student_logits, const Matrix& teacher_logits, double tau) {
  check_same_shape(student_logits.value(), teacher_logits, "kd_loss");
  Tape& tape = *student_logits.tape;
  const Matrix p = softmax_with_temperature(teacher_logits, tau);
  const double n = double(std::max<std::size_t>(p.rows(), 1));
  double entropy_term = 0.0;
  for (double v : p.data())
    if (v > 0.0) entropy_term += v * std::log(v);
  Var logq = ops::log_softmax(student_logits, tau);
  Var cross = ops::scale(ops::sum(ops::hadamard(tape.constant(p), logq)), -1.0 / n);
  return ops::add(tape.constant(Matrix(1, 1, entropy_term / n)), cross);
}

Var kd_loss(ParamBinder& binder, Var student_emb, const Projector& projector, const Matrix& teacher_emb, double tau) {
  Var projected = forward_projector(binder, projector, student_emb);
  if (projected.cols() != teacher_emb.cols())
    fail(ErrorCode::shape_mismatch, "kd_loss: projector output width " + std::to_string(projected.cols()) +
                                        " != teacher embedding width " + std::to_string(teacher_emb.cols()));
  return kd_loss_from_logits(projected, teacher_emb, tau);
}

Var struct_loss(ParamBinder& binder, Var student_emb, const ClassifierHead& classifier,
                std::span<const std::size_t> labels) {
  return ops::cross_entropy(forward_classifier(binder, classifier, student_emb), labels);
}

Var total_loss(Var kd, Var structure, double lambda1, double lambda2) {
  return ops::add(ops::scale(kd, lambda1), ops::scale(structure, lambda2));
}

double total_loss(double kd, double structure, double lambda1, double lambda2) {
  return lambda1 * kd + lambda2 * structure;
}

BatchObjective alignment_objective(ParamBinder& binder, const StudentBackbone& backbone, const AdapterSet& adapters,
                                   const Projector& projector, const ClassifierHead& classifier,
                                   const Matrix& img_batch, const Matrix& teacher_batch,
                                   std::span<const std::size_t> labels, const AlignmentConfig& cfg,
                                   const AdapterConfig& adapter_cfg, const ForwardMode& mode) {
  Tape& tape = binder.tape();
  Var emb = forward_student(binder, backbone, &adapters, tape.constant(img_batch), mode);
  BatchObjective out;
  out.kd = kd_loss(binder, emb, projector, teacher_batch, cfg.tau);
  out.structure = struct_loss(binder, emb, classifier, labels);
  out.objective = total_loss(out.kd, out.structure, cfg.lambda1, cfg.lambda2);
  if (adapters.kind == AdapterKind::adalora && adapter_cfg.adalora_ortho_weight > 0.0) {
    for (const auto& [name, a] : adapters.adapters) {
      const auto& ada = std::get<AdaLoraAdapter>(a);
      out.objective =
          ops::add(out.objective, ops::scale(adalora_orthogonality(binder, ada), adapter_cfg.adalora_ortho_weight));
    }
  }
  return out;
}

Matrix AlignedModel::embed(const Matrix& img, bool projected) const {
  const StudentBackbone merged = merge(backbone, adapters);
  Matrix emb = forward_student(merged, nullptr, img);
  return projected ? forward_projector(projector, emb) : emb;
}

std::string AlignedModel::history_csv() const {
  std::ostringstream os;
  os << "epoch,kd_loss,struct_loss,total_loss\n";
  char buf[128];
  for (std::size_t e = 0; e < history.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g\n", e, history[e].kd, history[e].structure, history[e].total);
    os << buf;
  }
  return os.str();
}

AlignedModel train_alignment(const StudentBackbone& backbone, const TeacherModel& teacher,
                             const PairedDataset& dataset, const AdapterConfig& adapter_cfg,
                             const AlignmentConfig& cfg) {
  cfg.validate();
  if (dataset.size() == 0) fail(ErrorCode::invalid_config, "train_alignment: dataset is empty");
  const Matrix teacher_emb = forward_teacher(teacher, log1p_matrix(dataset.expr));
  return train_alignment_precomputed(backbone, teacher_emb, dataset.img, adapter_cfg, cfg);
}

AlignedModel train_alignment_precomputed(const StudentBackbone& backbone, const Matrix& teacher_emb,
                                         const Matrix& img, const AdapterConfig& adapter_cfg,
                                         const AlignmentConfig& cfg) {
  cfg.validate();
  const std::size_t n = img.rows();
  if (n == 0) fail(ErrorCode::invalid_config, "train_alignment: dataset is empty");
  if (teacher_emb.rows() != n)
    fail(ErrorCode::shape_mismatch, "train_alignment: teacher embeddings for " + std::to_string(teacher_emb.rows()) +
                                        " samples, images for " + std::to_string(n));
  if (img.cols() != backbone.d_in())
    fail(ErrorCode::shape_mismatch, "train_alignment: image feature width " + std::to_string(img.cols()) +
                                        " != backbone input " + std::to_string(backbone.d_in()));

  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::uint64_t total_steps = std::uint64_t(steps_per_epoch) * cfg.epochs;

  AlignedModel model;
  model.backbone = backbone;
  model.config = cfg;
  model.adapter_config = adapter_cfg;
  model.adapters = attach_adapters(backbone, adapter_cfg, derive_seed(cfg.seed, kAdapters), total_steps);
  model.projector =
      init_projector(derive_seed(cfg.seed, kProjector), backbone.d_emb(), cfg.projector_hidden, teacher_emb.cols());
  model.classifier = init_classifier(derive_seed(cfg.seed, kClassifier), backbone.d_emb(), cfg.clusters);

  const PseudoLabels labels = build_pseudo_labels(teacher_emb, cfg.clusters, derive_seed(cfg.seed, kLabels));

  std::vector<TrainableRef> params;
  for (auto& [name, m] : model.adapters.parameters()) params.push_back({name, m, AdamState::for_param(*m)});
  for (DenseLayer* l : {&model.projector.hidden, &model.projector.output, &model.classifier.layer}) {
    params.push_back({l->name + ".weight", &l->weight, AdamState::for_param(l->weight)});
    params.push_back({l->name + ".bias", &l->bias, AdamState::for_param(l->bias)});
  }

  Rng shuffle_rng(derive_seed(cfg.seed, kShuffle));
  Rng dropout_rng(derive_seed(cfg.seed, kDropout));
  const ForwardMode mode{true, &dropout_rng};
  std::uint64_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(shuffle_rng, n);
    double kd_sum = 0.0, st_sum = 0.0, total_sum = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t lo = step * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      std::vector<std::size_t> batch_labels;
      for (std::size_t i : idx) batch_labels.push_back(labels.labels[i]);

      Tape tape;
      ParamBinder binder(tape);
      for (const auto& p : params) binder.mark_trainable(*p.value);
      BatchObjective obj = alignment_objective(binder, model.backbone, model.adapters, model.projector,
                                               model.classifier, select_rows(img, idx), select_rows(teacher_emb, idx),
                                               batch_labels, cfg, adapter_cfg, mode);
      const double kd = obj.kd.value()(0, 0);
      const double st = obj.structure.value()(0, 0);
      if (!std::isfinite(obj.objective.value()(0, 0)) || !std::isfinite(kd) || !std::isfinite(st)) {
        fail(ErrorCode::numeric, "train_alignment: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(step));
      }
      tape.backward(obj.objective);

      if (model.adapters.kind == AdapterKind::adalora) {
        for (auto& [name, a] : model.adapters.adapters) {
          auto& ada = std::get<AdaLoraAdapter>(a);
          update_importance(ada, binder.find(ada.lambda)->grad(), adapter_cfg.importance_decay);
        }
      }
      for (auto& p : params) {
        const Var* leaf = binder.find(*p.value);
        if (!leaf) continue;
        adam_step(*p.value, leaf->grad(), p.state, cfg.lr);
      }
      ++global_step;
      if (model.adapters.kind == AdapterKind::adalora) {
        for (auto& [name, a] : model.adapters.adapters) adalora_step_schedule(std::get<AdaLoraAdapter>(a), global_step);
      }

      const double w = double(hi - lo);
      kd_sum += kd * w;
      st_sum += st * w;
      total_sum += total_loss(kd, st, cfg.lambda1, cfg.lambda2) * w;
    }
    EpochRecord rec;
    rec.kd = kd_sum / double(n);
    rec.structure = st_sum / double(n);
    rec.total = total_sum / double(n);
    model.history.push_back(rec);
  }
  return model;
}

}  // namespace peka
