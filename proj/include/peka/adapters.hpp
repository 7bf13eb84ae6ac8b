#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "peka/encoders.hpp"
#include "peka/matrix.hpp"
#include "peka/tape.hpp"

namespace peka {

enum class AdapterKind { none, bone, lora, adalora };

std::string to_string(AdapterKind kind);
/// Accepts "none", "bone", "lora", "adalora" and "peka" (alias for bone).
AdapterKind adapter_kind_from_string(const std::string& s);

/// Block-affine adapter. `blocks` is b x cols: tile-column j of the target
/// weight shares the b x b block in columns [j*b, (j+1)*b).
struct BoneAdapter {
  std::string target;
  std::size_t block_size = 0;
  Matrix blocks;

  std::size_t block_count() const { return block_size ? blocks.cols() / block_size : 0; }
};

/// dW = (alpha / r) * B * A, B zero-initialised.
struct LoraAdapter {
  std::string target;
  std::size_t rank = 0;
  double alpha = 0.0;
  double dropout = 0.0;
  Matrix a;  // r x out
  Matrix b;  // in x r
};

struct RankSchedule {
  std::uint64_t step = 0;
  std::size_t target_rank = 0;
};

/// SVD-form adapter dW = P diag(lambda * mask) Q with importance-driven pruning.
struct AdaLoraAdapter {
  std::string target;
  std::size_t initial_rank = 0;
  Matrix p;       // in x r0
  Matrix lambda;  // 1 x r0
  Matrix q;       // r0 x out
  std::vector<bool> mask;
  std::vector<double> importance;
  std::vector<RankSchedule> schedule;

  std::size_t active_rank() const;
  Matrix mask_row() const;
};

using Adapter = std::variant<BoneAdapter, LoraAdapter, AdaLoraAdapter>;

struct AdapterSet {
  AdapterKind kind = AdapterKind::none;
  std::map<std::string, Adapter> adapters;

  const Adapter* find(const std::string& layer) const;
  /// Trainable matrices with stable names, e.g. "dense1.lora_b".
  std::vector<std::pair<std::string, Matrix*>> parameters();
  std::vector<std::pair<std::string, const Matrix*>> parameters() const;
  std::size_t trainable_count() const;
};

/// Empty layer list targets every dense layer of the backbone.
AdapterSet attach_bone(const StudentBackbone& backbone, std::vector<std::string> layers, std::size_t block_size);
AdapterSet attach_lora(const StudentBackbone& backbone, std::vector<std::string> layers, std::size_t rank,
                       double alpha, double dropout, std::uint64_t seed);
AdapterSet attach_adalora(const StudentBackbone& backbone, std::vector<std::string> layers, std::size_t initial_rank,
                          std::vector<RankSchedule> schedule, std::uint64_t seed);

Matrix bone_delta(const BoneAdapter& adapter, const Matrix& w);
Matrix lora_delta(const LoraAdapter& adapter);
Matrix adalora_delta(const AdaLoraAdapter& adapter);
Matrix adapter_delta(const Adapter& adapter, const Matrix& w);

/// Contribution x * dW of one adapter on the tape.
Var adapter_path(ParamBinder& binder, const Adapter& adapter, const Matrix& w, Var x, const ForwardMode& mode);

/// Updates the exponential moving average of |lambda_i * dL/dlambda_i|.
void update_importance(AdaLoraAdapter& adapter, const Matrix& lambda_grad, double decay);

/// Applies the schedule entry for `global_step`, if any: keeps the
/// highest-importance active ranks (ties keep the lower index). Returns true
/// when the mask changed. Masking is permanent.
bool adalora_step_schedule(AdaLoraAdapter& adapter, std::uint64_t global_step);

/// Orthogonality penalty ||P^T P - I||_F^2 + ||Q Q^T - I||_F^2 on the tape.
Var adalora_orthogonality(ParamBinder& binder, const AdaLoraAdapter& adapter);

/// New backbone with W <- W + dW for every adapted layer.
StudentBackbone merge(const StudentBackbone& backbone, const AdapterSet& adapters);

/// Adapter trainable parameters over backbone weight entries.
double trainable_fraction(const StudentBackbone& backbone, const AdapterSet& adapters);

}  // namespace peka
