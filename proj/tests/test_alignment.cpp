#include <chrono>
#include <cmath>

#include "peka/alignment.hpp"
#include "peka/gradcheck.hpp"
#include "support.hpp"

using namespace peka;
using testing::Gen;

namespace {

ClassifierHead identity_head(std::size_t c) {
  ClassifierHead h;
  h.layer.name = "cls";
  h.layer.weight = Matrix::identity(c);
  h.layer.bias = Matrix(1, c);
  return h;
}

double brute_struct(const Matrix& logits, const std::vector<std::size_t>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double z = 0.0;
    for (double x : logits.row(i)) z += std::exp(x);
    total += std::log(z) - logits(i, labels[i]);
  }
  return total / double(logits.rows());
}

double kd_value(const Matrix& student, const Matrix& teacher, double tau) {
  Tape t;
  return kd_loss_from_logits(t.constant(student), teacher, tau).value()(0, 0);
}

std::size_t nearest(const Matrix& x, std::size_t i, const Matrix& c) {
  std::size_t best = 0;
  double bd = INFINITY;
  for (std::size_t k = 0; k < c.rows(); ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) d += (x(i, j) - c(k, j)) * (x(i, j) - c(k, j));
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  return best;
}

PairedDataset small_dataset(std::size_t n, std::uint64_t seed = 7) {
  GeneratorConfig g;
  g.n = n;
  g.seed = seed;
  return generate_synthetic(g);
}

AdapterConfig adapter_of(AdapterKind kind) {
  AdapterConfig a;
  a.kind = kind;
  return a;
}

}  // namespace

TEST_CASE("alignment config validation") {
  AlignmentConfig c;
  CHECK(c.lambda1 == 0.5);
  CHECK(c.lambda2 == 0.5);
  CHECK(c.epochs == 50);
  CHECK(c.lr == 1e-4);
  CHECK_NOTHROW(c.validate());
  c.lambda1 = c.lambda2 = 0.0;
  CHECK(testing::error_code_of([&] { c.validate(); }) == ErrorCode::invalid_config);
  c = {};
  c.tau = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.clusters = 1;
  CHECK_THROWS(c.validate());
  c = {};
  c.lambda1 = -0.1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("pseudo labels: single cluster") {
  Gen g(1);
  const Matrix x = g.matrix(12, 3);
  const PseudoLabels pl = build_pseudo_labels(x, 1, 4);
  for (std::size_t l : pl.labels) CHECK(l == 0);
  CHECK(max_abs_diff(pl.centroids, column_means(x)) < 1e-12);
}

TEST_CASE("pseudo labels: well separated blobs") {
  testing::for_seeds(10, [](Gen& g) {
    const std::size_t n = 40;
    Matrix x(n, 3);
    std::vector<std::size_t> blob(n);
    for (std::size_t i = 0; i < n; ++i) {
      blob[i] = g.index(0, 1);
      for (std::size_t j = 0; j < 3; ++j) x(i, j) = g.normal() + (blob[i] && j == 0 ? 100.0 : 0.0);
    }
    blob[0] = 0;
    blob[1] = 1;
    x(0, 0) = 0.0;
    x(1, 0) = 100.0;
    const PseudoLabels pl = build_pseudo_labels(x, 2, g.index(0, 1000));
    for (std::size_t i = 0; i < n; ++i) {
      CHECK((pl.labels[i] == pl.labels[0]) == (blob[i] == 0));
      CHECK(pl.labels[i] == nearest(x, i, pl.centroids));
    }
  });
}

TEST_CASE("pseudo labels are deterministic, total and nearest-centroid") {
  testing::for_seeds(10, [](Gen& g) {
    const std::size_t n = g.index(10, 60), c = g.index(2, 6);
    Matrix x = g.matrix(n, 4);
    for (std::size_t j = 0; j < 4; ++j) x(n - 1, j) = x(0, j);  // duplicate row
    const std::uint64_t seed = g.index(0, 1u << 20);
    const PseudoLabels a = build_pseudo_labels(x, c, seed), b = build_pseudo_labels(x, c, seed);
    CHECK(a.labels == b.labels);
    CHECK(a.centroids == b.centroids);
    CHECK(a.labels.size() == n);
    CHECK(a.labels[0] == a.labels[n - 1]);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(a.labels[i] < c);
      CHECK(a.labels[i] == nearest(x, i, a.centroids));
    }
  });
}

TEST_CASE("pseudo labels need at least as many rows as clusters") {
  CHECK(testing::error_code_of([] { build_pseudo_labels(Matrix(3, 2), 4, 1); }) == ErrorCode::invalid_config);
}

TEST_CASE("kd loss examples") {
  Gen g(2);
  const Matrix t = g.matrix(3, 5);
  CHECK(std::abs(kd_value(t, t, 1.0)) < 1e-15);
  CHECK(kd_value(Matrix::from_rows({{0, 1}}), Matrix::from_rows({{1, 0}}), 1.0) ==
        doctest::Approx(0.4621).epsilon(1e-4));
  // Independent evaluation through the plain-matrix KL.
  CHECK(kd_value(Matrix::from_rows({{0, 1}}), Matrix::from_rows({{1, 0}}), 1.0) ==
        doctest::Approx(kl_divergence(softmax_with_temperature(Matrix::from_rows({{1, 0}}), 1.0),
                                      softmax_with_temperature(Matrix::from_rows({{0, 1}}), 1.0)))
            .epsilon(1e-14));

  testing::for_seeds(10, [](Gen& gg) {
    const Matrix s = gg.matrix(4, 3), te = gg.matrix(4, 3);
    const double at1 = kd_value(s, te, 1.0), at10 = kd_value(s, te, 10.0);
    CHECK(at10 < at1);
    CHECK(at1 == doctest::Approx(kl_divergence(softmax_with_temperature(te, 1.0), softmax_with_temperature(s, 1.0)))
                     .epsilon(1e-12));
  });
}

TEST_CASE("kd loss through the projector and shape checks") {
  Gen g(3);
  const Projector p = init_projector(1, 4, 5, 3);
  const Matrix emb = g.matrix(2, 4);
  Tape t;
  ParamBinder binder(t);
  const Matrix teacher = forward_projector(p, emb);
  CHECK(std::abs(kd_loss(binder, t.constant(emb), p, teacher, 1.0).value()(0, 0)) < 1e-15);
  CHECK(testing::error_code_of([&] { kd_loss(binder, t.constant(emb), p, Matrix(2, 4), 1.0); }) ==
        ErrorCode::shape_mismatch);
}

TEST_CASE("struct loss examples") {
  Tape t;
  ParamBinder binder(t);
  const ClassifierHead h4 = identity_head(4), h2 = identity_head(2);
  const std::vector<std::size_t> l0 = {2};
  CHECK(struct_loss(binder, t.constant(Matrix::from_rows({{0, 0, 100, 0}})), h4, l0).value()(0, 0) < 1e-6);
  CHECK(struct_loss(binder, t.constant(Matrix(1, 4)), h4, l0).value()(0, 0) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-14));
  const std::vector<std::size_t> zero = {0};
  CHECK(struct_loss(binder, t.constant(Matrix(1, 2)), h2, zero).value()(0, 0) ==
        doctest::Approx(0.6931).epsilon(1e-4));
  const std::vector<std::size_t> bad = {4};
  CHECK(testing::error_code_of([&] { struct_loss(binder, t.constant(Matrix(1, 4)), h4, bad); }) ==
        ErrorCode::invalid_config);
}

TEST_CASE("struct loss matches a brute-force cross entropy") {
  testing::for_seeds(10, [](Gen& g) {
    const std::size_t n = g.index(1, 6), c = g.index(2, 5);
    const Matrix logits = g.matrix(n, c, 3.0);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = g.index(0, c - 1);
    Tape t;
    ParamBinder binder(t);
    CHECK(struct_loss(binder, t.constant(logits), identity_head(c), labels).value()(0, 0) ==
          doctest::Approx(brute_struct(logits, labels)).epsilon(1e-12));
  });
}

TEST_CASE("total loss examples") {
  CHECK(total_loss(0.4, 0.6, 0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(total_loss(0.37, 5.0, 0.8, 0.0) == 0.8 * 0.37);
  CHECK(total_loss(9.0, std::log(2.0), 0.0, 1.0) == doctest::Approx(0.6931).epsilon(1e-4));
  Tape t;
  Var v = total_loss(t.constant(Matrix(1, 1, 0.4)), t.constant(Matrix(1, 1, 0.6)), 0.5, 0.5);
  CHECK(v.value()(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("full objective gradient check for every adapter kind") {
  const auto start = std::chrono::steady_clock::now();
  const PairedDataset ds = small_dataset(40);
  const StudentBackbone s = init_student(101, 32, {64, 64}, 48);
  const TeacherModel teacher = init_teacher(202, 60, {64}, 32);
  const Matrix temb = forward_teacher(teacher, log1p_matrix(ds.expr));
  const std::vector<std::size_t> rows = {0, 1, 2, 3};
  const Matrix img = select_rows(ds.img, rows), tb = select_rows(temb, rows);
  const std::vector<std::size_t> labels = {0, 3, 1, 3};
  AlignmentConfig cfg;
  cfg.clusters = 4;

  for (AdapterKind kind : {AdapterKind::none, AdapterKind::bone, AdapterKind::lora, AdapterKind::adalora}) {
    CAPTURE(to_string(kind));
    const AdapterConfig acfg = adapter_of(kind);
    AdapterSet adapters = attach_adapters(s, acfg, 5, 100);
    Gen g(31);
    for (auto& [name, m] : adapters.parameters())
      for (double& x : m->data()) x = g.normal(0.05);
    Projector proj = init_projector(8, 48, 64, 32);
    ClassifierHead head = init_classifier(9, 48, 4);

    std::vector<Matrix*> params;
    for (auto& [name, m] : adapters.parameters()) params.push_back(m);
    for (Matrix* m : {&proj.hidden.weight, &proj.hidden.bias, &proj.output.weight, &proj.output.bias,
                      &head.layer.weight, &head.layer.bias})
      params.push_back(m);

    const auto loss = [&](Tape& t, std::span<const Var> leaves) {
      ParamBinder binder(t);
      for (std::size_t i = 0; i < leaves.size(); ++i) binder.adopt(*params[i], leaves[i]);
      std::mt19937_64 rng(77);  // same dropout mask on every evaluation
      ForwardMode mode{true, &rng};
      return alignment_objective(binder, s, adapters, proj, head, img, tb, labels, cfg, acfg, mode).objective;
    };
    const GradCheckReport r = finite_difference_check(loss, params, 1e-5, 1e-4);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-4);
  }
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 10.0);
}

TEST_CASE("zero epochs leaves the frozen forward") {
  const PairedDataset ds = small_dataset(60);
  const StudentBackbone s = init_student(101, 32, {64, 64}, 48);
  const TeacherModel teacher = init_teacher(202, 60, {64}, 32);
  AlignmentConfig cfg;
  cfg.epochs = 0;
  for (AdapterKind kind : {AdapterKind::bone, AdapterKind::lora, AdapterKind::adalora}) {
    const AlignedModel m = train_alignment(s, teacher, ds, adapter_of(kind), cfg);
    CHECK(m.history.empty());
    CHECK(max_abs_diff(m.embed(ds.img), forward_student(s, nullptr, ds.img)) < 1e-12);
  }
}

TEST_CASE("training freezes the backbone, records consistent history and is deterministic") {
  const PairedDataset ds = small_dataset(120);
  const StudentBackbone s = init_student(101, 32, {64, 64}, 48);
  const StudentBackbone copy = s;
  const TeacherModel teacher = init_teacher(202, 60, {64}, 32);
  AlignmentConfig cfg;
  cfg.epochs = 4;
  cfg.lr = 1e-3;
  for (AdapterKind kind : {AdapterKind::none, AdapterKind::bone, AdapterKind::lora, AdapterKind::adalora}) {
    CAPTURE(to_string(kind));
    const AlignedModel a = train_alignment(s, teacher, ds, adapter_of(kind), cfg);
    const AlignedModel b = train_alignment(s, teacher, ds, adapter_of(kind), cfg);
    REQUIRE(a.history.size() == 4);
    for (std::size_t i = 0; i < copy.layers.size(); ++i) {
      CHECK(a.backbone.layers[i].weight == copy.layers[i].weight);
      CHECK(a.backbone.layers[i].bias == copy.layers[i].bias);
    }
    for (const EpochRecord& r : a.history)
      CHECK(std::abs(r.total - (cfg.lambda1 * r.kd + cfg.lambda2 * r.structure)) < 1e-12);
    CHECK(a.history_csv() == b.history_csv());
    CHECK(a.embed(ds.img) == b.embed(ds.img));
    CHECK(a.projector.output.weight == b.projector.output.weight);
    CHECK(a.history_csv().rfind("epoch,kd_loss,struct_loss,total_loss\n", 0) == 0);

    AlignmentConfig untrained = cfg;
    untrained.epochs = 0;
    const AlignedModel z = train_alignment(s, teacher, ds, adapter_of(kind), untrained);
    CHECK_FALSE(a.projector.output.weight == z.projector.output.weight);
    CHECK_FALSE(a.classifier.layer.weight == z.classifier.layer.weight);
  }
}

TEST_CASE("adalora training follows its schedule") {
  const PairedDataset ds = small_dataset(64);
  const StudentBackbone s = init_student(101, 32, {64, 64}, 48);
  const TeacherModel teacher = init_teacher(202, 60, {64}, 32);
  AlignmentConfig cfg;
  cfg.epochs = 3;
  const AlignedModel m = train_alignment(s, teacher, ds, adapter_of(AdapterKind::adalora), cfg);
  for (const auto& [name, a] : m.adapters.adapters) CHECK(std::get<AdaLoraAdapter>(a).active_rank() == 4);
}

TEST_CASE("training only consults teacher embeddings") {
  const PairedDataset ds = small_dataset(50);
  const StudentBackbone s = init_student(101, 32, {64, 64}, 48);
  TeacherModel teacher = init_teacher(202, 60, {64}, 32);
  AlignmentConfig cfg;
  cfg.epochs = 2;
  const Matrix temb = forward_teacher(teacher, log1p_matrix(ds.expr));
  const AlignedModel a = train_alignment(s, teacher, ds, adapter_of(AdapterKind::bone), cfg);
  for (double& x : teacher.layers[0].weight.data()) x += 1.0;  // perturbed after the embeddings were taken
  const AlignedModel b = train_alignment_precomputed(s, temb, ds.img, adapter_of(AdapterKind::bone), cfg);
  CHECK(a.history_csv() == b.history_csv());
  CHECK(a.embed(ds.img) == b.embed(ds.img));
}

TEST_CASE("default training lowers the total loss on the default dataset") {
  const PairedDataset ds = small_dataset(2000);
  const StudentBackbone s = init_student(101, 32, {64, 64}, 48);
  const TeacherModel teacher = init_teacher(202, 60, {64}, 32);
  const AlignedModel m = train_alignment(s, teacher, ds, adapter_of(AdapterKind::bone), AlignmentConfig{});
  REQUIRE(m.history.size() == 50);
  CHECK(m.history.back().total < m.history.front().total);
}

TEST_CASE("training rejects empty datasets and mismatched teacher rows") {
  const StudentBackbone s = init_student(101, 32, {64, 64}, 48);
  CHECK_THROWS(train_alignment_precomputed(s, Matrix(0, 32), Matrix(0, 32), AdapterConfig{}, AlignmentConfig{}));
  CHECK_THROWS(train_alignment_precomputed(s, Matrix(5, 32), Matrix(4, 32), AdapterConfig{}, AlignmentConfig{}));
}
