#include "peka/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "peka/error.hpp"
#include "peka/random.hpp"

namespace peka {
namespace {

std::vector<std::string> resolve_targets(const StudentBackbone& backbone, std::vector<std::string> layers) {
  if (layers.empty()) return backbone.layer_names();
  for (const auto& name : layers) (void)backbone.layer(name);
  std::vector<std::string> sorted = layers;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    fail(ErrorCode::invalid_config, "adapter target list names a layer twice");
  return layers;
}

template <class F>
void for_each_param(AdapterSet& set, F&& f) {
  for (auto& [name, adapter] : set.adapters) {
    std::visit(
        [&](auto& a) {
          using T = std::decay_t<decltype(a)>;
          if constexpr (std::is_same_v<T, BoneAdapter>) {
            f(name + ".bone_blocks", a.blocks);
          } else if constexpr (std::is_same_v<T, LoraAdapter>) {
            f(name + ".lora_a", a.a);
            f(name + ".lora_b", a.b);
          } else {
            f(name + ".adalora_p", a.p);
            f(name + ".adalora_lambda", a.lambda);
            f(name + ".adalora_q", a.q);
          }
        },
        adapter);
  }
}

}  // namespace

std::string to_string(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::none: return "none";
    case AdapterKind::bone: return "bone";
    case AdapterKind::lora: return "lora";
    case AdapterKind::adalora: return "adalora";
  }
  return "none";
}

AdapterKind adapter_kind_from_string(const std::string& s) {
  if (s == "none") return AdapterKind::none;
  if (s == "bone" || s == "peka") return AdapterKind::bone;
  if (s == "lora") return AdapterKind::lora;
  if (s == "adalora") return AdapterKind::adalora;
  fail(ErrorCode::invalid_config, "unknown adapter kind '" + s + "' (expected none, bone, peka, lora, adalora)");
}

std::size_t AdaLoraAdapter::active_rank() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

Matrix AdaLoraAdapter::mask_row() const {
  Matrix m(1, mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) m(0, i) = mask[i] ? 1.0 : 0.0;
  return m;
}

const Adapter* AdapterSet::find(const std::string& layer) const {
  auto it = adapters.find(layer);
  return it == adapters.end() ? nullptr : &it->second;
}

std::vector<std::pair<std::string, Matrix*>> AdapterSet::parameters() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for_each_param(*this, [&](std::string name, Matrix& m) { out.emplace_back(std::move(name), &m); });
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> AdapterSet::parameters() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for_each_param(const_cast<AdapterSet&>(*this),
                 [&](std::string name, Matrix& m) { out.emplace_back(std::move(name), &m); });
  return out;
}

std::size_t AdapterSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : parameters()) n += m->size();
  return n;
}

AdapterSet attach_bone(const StudentBackbone& backbone, std::vector<std::string> layers, std::size_t block_size) {
  AdapterSet set;
  set.kind = AdapterKind::bone;
  for (const auto& name : resolve_targets(backbone, std::move(layers))) {
    const Matrix& w = backbone.layer(name).weight;
    if (block_size == 0 || w.rows() % block_size != 0 || w.cols() % block_size != 0) {
      fail(ErrorCode::invalid_config, "bone block size " + std::to_string(block_size) +
                                          " does not divide layer '" + name + "' of shape " + w.shape_string());
    }
    set.adapters.emplace(name, BoneAdapter{name, block_size, Matrix(block_size, w.cols())});
  }
  return set;
}

AdapterSet attach_lora(const StudentBackbone& backbone, std::vector<std::string> layers, std::size_t rank,
                       double alpha, double dropout, std::uint64_t seed) {
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorCode::invalid_config, "lora dropout must lie in [0, 1)");
  AdapterSet set;
  set.kind = AdapterKind::lora;
  Rng rng(seed);
  for (const auto& name : resolve_targets(backbone, std::move(layers))) {
    const Matrix& w = backbone.layer(name).weight;
    const std::size_t lim = std::min(w.rows(), w.cols());
    if (rank == 0 || rank > lim) {
      fail(ErrorCode::invalid_config, "lora rank " + std::to_string(rank) + " out of range [1, " +
                                          std::to_string(lim) + "] for layer '" + name + "' " + w.shape_string());
    }
    LoraAdapter a;
    a.target = name;
    a.rank = rank;
    a.alpha = alpha;
    a.dropout = dropout;
    a.a = gaussian_matrix(rng, rank, w.cols(), 1.0 / std::sqrt(static_cast<double>(w.rows())));
    a.b = Matrix(w.rows(), rank);
    set.adapters.emplace(name, std::move(a));
  }
  return set;
}

AdapterSet attach_adalora(const StudentBackbone& backbone, std::vector<std::string> layers, std::size_t initial_rank,
                          std::vector<RankSchedule> schedule, std::uint64_t seed) {
  if (!std::is_sorted(schedule.begin(), schedule.end(),
                      [](const RankSchedule& l, const RankSchedule& r) { return l.step < r.step; }))
    fail(ErrorCode::invalid_config, "adalora schedule must be sorted by step");
  AdapterSet set;
  set.kind = AdapterKind::adalora;
  Rng rng(seed);
  for (const auto& name : resolve_targets(backbone, std::move(layers))) {
    const Matrix& w = backbone.layer(name).weight;
    const std::size_t lim = std::min(w.rows(), w.cols());
    if (initial_rank == 0 || initial_rank > lim) {
      fail(ErrorCode::invalid_config, "adalora rank " + std::to_string(initial_rank) + " out of range for layer '" +
                                          name + "' " + w.shape_string());
    }
    AdaLoraAdapter a;
    a.target = name;
    a.initial_rank = initial_rank;
    a.p = gaussian_matrix(rng, w.rows(), initial_rank, 0.02);
    a.lambda = Matrix(1, initial_rank);
    a.q = gaussian_matrix(rng, initial_rank, w.cols(), 0.02);
    a.mask.assign(initial_rank, true);
    a.importance.assign(initial_rank, 0.0);
    a.schedule = schedule;
    set.adapters.emplace(name, std::move(a));
  }
  return set;
}

Matrix bone_delta(const BoneAdapter& adapter, const Matrix& w) {
  return bone_delta_value(w, adapter.blocks, adapter.block_size);
}

Matrix lora_delta(const LoraAdapter& adapter) {
  return scale(matmul(adapter.b, adapter.a), adapter.alpha / static_cast<double>(adapter.rank));
}

Matrix adalora_delta(const AdaLoraAdapter& adapter) {
  Matrix pl = adapter.p;
  for (std::size_t i = 0; i < pl.rows(); ++i)
    for (std::size_t j = 0; j < pl.cols(); ++j) pl(i, j) *= adapter.mask[j] ? adapter.lambda(0, j) : 0.0;
  return matmul(pl, adapter.q);
}

Matrix adapter_delta(const Adapter& adapter, const Matrix& w) {
  return std::visit(
      [&](const auto& a) -> Matrix {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, BoneAdapter>) {
          return bone_delta(a, w);
        } else {
          Matrix d;
          if constexpr (std::is_same_v<T, LoraAdapter>)
            d = lora_delta(a);
          else
            d = adalora_delta(a);
          check_same_shape(d, w, "adapter delta");
          return d;
        }
      },
      adapter);
}

Var adapter_path(ParamBinder& binder, const Adapter& adapter, const Matrix& w, Var x, const ForwardMode& mode) {
  Tape& tape = binder.tape();
  return std::visit(
      [&](const auto& a) -> Var {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, BoneAdapter>) {
          return ops::matmul(x, ops::bone_delta(w, binder.bind(a.blocks), a.block_size));
        } else if constexpr (std::is_same_v<T, LoraAdapter>) {
          if (a.b.rows() != w.rows() || a.a.cols() != w.cols())
            fail(ErrorCode::shape_mismatch, "lora adapter on '" + a.target + "' does not match " + w.shape_string());
          Var in = x;
          if (mode.training && a.dropout > 0.0) {
            if (!mode.dropout_rng) fail(ErrorCode::internal, "lora dropout needs an rng in training mode");
            std::bernoulli_distribution keep(1.0 - a.dropout);
            Matrix mask(x.rows(), x.cols());
            for (double& v : mask.data()) v = keep(*mode.dropout_rng) ? 1.0 / (1.0 - a.dropout) : 0.0;
            in = ops::hadamard(x, tape.constant(std::move(mask)));
          }
          Var low = ops::matmul(ops::matmul(in, binder.bind(a.b)), binder.bind(a.a));
          return ops::scale(low, a.alpha / static_cast<double>(a.rank));
        } else {
          if (a.p.rows() != w.rows() || a.q.cols() != w.cols())
            fail(ErrorCode::shape_mismatch, "adalora adapter on '" + a.target + "' does not match " + w.shape_string());
          Var lam = ops::hadamard(binder.bind(a.lambda), tape.constant(a.mask_row()));
          return ops::matmul(ops::mul_row(ops::matmul(x, binder.bind(a.p)), lam), binder.bind(a.q));
        }
      },
      adapter);
}

void update_importance(AdaLoraAdapter& adapter, const Matrix& lambda_grad, double decay) {
  check_same_shape(adapter.lambda, lambda_grad, "update_importance");
  for (std::size_t i = 0; i < adapter.importance.size(); ++i) {
    const double s = std::abs(adapter.lambda(0, i) * lambda_grad(0, i));
    adapter.importance[i] = decay * adapter.importance[i] + (1.0 - decay) * s;
  }
}

bool adalora_step_schedule(AdaLoraAdapter& adapter, std::uint64_t global_step) {
  auto it = std::find_if(adapter.schedule.begin(), adapter.schedule.end(),
                         [&](const RankSchedule& s) { return s.step == global_step; });
  if (it == adapter.schedule.end()) return false;
  const std::size_t active = adapter.active_rank();
  if (it->target_rank > active) {
    fail(ErrorCode::invalid_config, "adalora schedule asks for rank " + std::to_string(it->target_rank) +
                                        " but only " + std::to_string(active) + " ranks are active");
  }
  if (it->target_rank == active) return false;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < adapter.mask.size(); ++i)
    if (adapter.mask[i]) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return adapter.importance[l] > adapter.importance[r];
  });
  for (std::size_t k = it->target_rank; k < order.size(); ++k) adapter.mask[order[k]] = false;
  return true;
}

Var adalora_orthogonality(ParamBinder& binder, const AdaLoraAdapter& adapter) {
  Tape& tape = binder.tape();
  Var p = binder.bind(adapter.p);
  Var q = binder.bind(adapter.q);
  const std::size_t r = adapter.initial_rank;
  Var dp = ops::sub(ops::matmul(ops::transpose(p), p), tape.constant(Matrix::identity(r)));
  Var dq = ops::sub(ops::matmul(q, ops::transpose(q)), tape.constant(Matrix::identity(r)));
  return ops::add(ops::sum(ops::hadamard(dp, dp)), ops::sum(ops::hadamard(dq, dq)));
}

StudentBackbone merge(const StudentBackbone& backbone, const AdapterSet& adapters) {
  StudentBackbone out = backbone;
  for (const auto& [name, adapter] : adapters.adapters) {
    bool found = false;
    for (auto& layer : out.layers) {
      if (layer.name != name) continue;
      add_inplace(layer.weight, adapter_delta(adapter, layer.weight));
      found = true;
    }
    if (!found) fail(ErrorCode::shape_mismatch, "merge: adapter targets unknown layer '" + name + "'");
  }
  return out;
}

double trainable_fraction(const StudentBackbone& backbone, const AdapterSet& adapters) {
  const std::size_t num = adapters.trainable_count();
  const std::size_t den = backbone.weight_count();
  if (den == 0) return 0.0;
  const std::size_t g = std::gcd(num, den);
  return static_cast<double>(num / g) / static_cast<double>(den / g);
}

}  // namespace peka
