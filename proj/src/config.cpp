#include "peka/config.hpp"

#include <set>

#include "peka/error.hpp"

namespace peka {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) fail(ErrorCode::invalid_config, std::string(what) + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) fail(ErrorCode::invalid_config, std::string(what) + ": unknown key '" + k + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_config, std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

json parse_json_object(const std::string& text, const char* what) {
  if (text.empty()) return json::object();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_config, std::string(what) + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::invalid_config, std::string(what) + ": expected a JSON object");
  return j;
}

json to_json(const GeneratorConfig& c) {
  return json{{"n", c.n},
              {"d_latent", c.d_latent},
              {"d_shared", c.d_shared},
              {"d_in", c.d_in},
              {"genes", c.genes},
              {"noise_img", c.noise_img},
              {"noise_expr", c.noise_expr},
              {"cluster_count", c.cluster_count},
              {"cluster_spread", c.cluster_spread},
              {"rate_scale", c.rate_scale},
              {"within_spread", c.within_spread},
              {"nuisance_dims", c.nuisance_dims},
              {"nuisance_scale", c.nuisance_scale},
              {"seed", c.seed}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  reject_unknown(j,
                 {"n", "d_latent", "d_shared", "d_in", "genes", "noise_img", "noise_expr", "cluster_count",
                  "cluster_spread", "rate_scale", "within_spread", "nuisance_dims", "nuisance_scale", "seed"},
                 "generator config");
  GeneratorConfig c;
  read(j, "n", c.n);
  read(j, "d_latent", c.d_latent);
  read(j, "d_shared", c.d_shared);
  read(j, "d_in", c.d_in);
  read(j, "genes", c.genes);
  read(j, "noise_img", c.noise_img);
  read(j, "noise_expr", c.noise_expr);
  read(j, "cluster_count", c.cluster_count);
  read(j, "cluster_spread", c.cluster_spread);
  read(j, "rate_scale", c.rate_scale);
  read(j, "within_spread", c.within_spread);
  read(j, "nuisance_dims", c.nuisance_dims);
  read(j, "nuisance_scale", c.nuisance_scale);
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

json to_json(const AlignRunConfig& c) {
  const auto& a = c.alignment;
  const auto& ad = c.adapter;
  return json{{"adapter", to_string(ad.kind)},
              {"targets", ad.targets},
              {"block_size", ad.block_size},
              {"lora_rank", ad.lora_rank},
              {"lora_alpha", ad.lora_alpha},
              {"lora_dropout", ad.lora_dropout},
              {"adalora_rank", ad.adalora_rank},
              {"adalora_target_rank", ad.adalora_target_rank},
              {"adalora_ortho_weight", ad.adalora_ortho_weight},
              {"importance_decay", ad.importance_decay},
              {"lambda1", a.lambda1},
              {"lambda2", a.lambda2},
              {"tau", a.tau},
              {"clusters", a.clusters},
              {"epochs", a.epochs},
              {"batch_size", a.batch_size},
              {"lr", a.lr},
              {"seed", a.seed},
              {"projector_hidden", a.projector_hidden},
              {"backbone_seed", c.backbone_seed},
              {"teacher_seed", c.teacher_seed},
              {"student_hidden", c.student_hidden},
              {"student_emb", c.student_emb},
              {"teacher_hidden", c.teacher_hidden},
              {"teacher_emb", c.teacher_emb}};
}

AlignRunConfig align_config_from_json(const json& j) {
  reject_unknown(j,
                 {"adapter", "targets", "block_size", "lora_rank", "lora_alpha", "lora_dropout", "adalora_rank",
                  "adalora_target_rank", "adalora_ortho_weight", "importance_decay", "lambda1", "lambda2", "tau",
                  "clusters", "epochs", "batch_size", "lr", "seed", "projector_hidden", "backbone_seed",
                  "teacher_seed", "student_hidden", "student_emb", "teacher_hidden", "teacher_emb"},
                 "align config");
  AlignRunConfig c;
  std::string kind = to_string(c.adapter.kind);
  read(j, "adapter", kind);
  c.adapter.kind = adapter_kind_from_string(kind);
  read(j, "targets", c.adapter.targets);
  read(j, "block_size", c.adapter.block_size);
  read(j, "lora_rank", c.adapter.lora_rank);
  read(j, "lora_alpha", c.adapter.lora_alpha);
  read(j, "lora_dropout", c.adapter.lora_dropout);
  read(j, "adalora_rank", c.adapter.adalora_rank);
  read(j, "adalora_target_rank", c.adapter.adalora_target_rank);
  read(j, "adalora_ortho_weight", c.adapter.adalora_ortho_weight);
  read(j, "importance_decay", c.adapter.importance_decay);
  read(j, "lambda1", c.alignment.lambda1);
  read(j, "lambda2", c.alignment.lambda2);
  read(j, "tau", c.alignment.tau);
  read(j, "clusters", c.alignment.clusters);
  read(j, "epochs", c.alignment.epochs);
  read(j, "batch_size", c.alignment.batch_size);
  read(j, "lr", c.alignment.lr);
  read(j, "seed", c.alignment.seed);
  read(j, "projector_hidden", c.alignment.projector_hidden);
  read(j, "backbone_seed", c.backbone_seed);
  read(j, "teacher_seed", c.teacher_seed);
  read(j, "student_hidden", c.student_hidden);
  read(j, "student_emb", c.student_emb);
  read(j, "teacher_hidden", c.teacher_hidden);
  read(j, "teacher_emb", c.teacher_emb);
  c.alignment.validate();
  require(c.student_emb >= 1 && c.teacher_emb >= 1, "embedding dimensions must be >= 1");
  return c;
}

json to_json(const EvalRunConfig& c) {
  return json{{"folds", c.probe.folds},
              {"hvg", c.probe.hvg},
              {"pca_k", c.probe.pca_k},
              {"ridge_lambda", c.probe.ridge_lambda},
              {"seed", c.probe.seed},
              {"use_projected", c.use_projected}};
}

EvalRunConfig eval_config_from_json(const json& j) {
  reject_unknown(j, {"folds", "hvg", "pca_k", "ridge_lambda", "seed", "use_projected"}, "eval config");
  EvalRunConfig c;
  read(j, "folds", c.probe.folds);
  read(j, "hvg", c.probe.hvg);
  read(j, "pca_k", c.probe.pca_k);
  read(j, "ridge_lambda", c.probe.ridge_lambda);
  read(j, "seed", c.probe.seed);
  read(j, "use_projected", c.use_projected);
  require(c.probe.folds >= 2, "folds must be >= 2 (got " + std::to_string(c.probe.folds) + ")");
  require(c.probe.hvg >= 1, "hvg must be >= 1");
  require(c.probe.pca_k >= 1, "pca_k must be >= 1");
  require(c.probe.ridge_lambda >= 0.0, "ridge_lambda must be >= 0");
  return c;
}

}  // namespace peka
