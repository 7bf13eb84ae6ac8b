// peka command-line front end. Talks to the library only through peka.h.

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "peka/peka.h"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Failure {
  int exit_code;
  std::string message;
};

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{kExitUsage, msg}; }

void check(peka_status s) {
  if (s == PEKA_OK) return;
  throw Failure{s == PEKA_ERR_INVALID_CONFIG ? kExitUsage : kExitRuntime,
                std::string(peka_status_name(s)) + ": " + peka_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  peka_string_free(s);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure{kExitRuntime, "io: cannot open '" + path + "' for writing"};
  out << text;
  if (!out) throw Failure{kExitRuntime, "io: failed writing '" + path + "'"};
}

std::string sibling(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

template <class T>
void put(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::size_t start = 0;
    while (start <= item.size()) {
      const std::size_t comma = item.find(',', start);
      const std::string part = item.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!part.empty()) out.push_back(part);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  return out;
}

// Command line and config file win; PEKA_SEED only supplies the default.
std::optional<std::uint64_t> resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return flag;
  const char* env = std::getenv("PEKA_SEED");
  if (!env || !*env) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || *end != '\0' || env[0] == '-') usage_error("PEKA_SEED must be a non-negative integer, got '" +
                                                                std::string(env) + "'");
  return static_cast<std::uint64_t>(v);
}

std::string resolve(const char* kind, const json& cfg) {
  char* out = nullptr;
  check(peka_config_resolve(kind, cfg.dump().c_str(), &out));
  return take(out);
}

struct Dataset {
  peka_dataset* h = nullptr;
  ~Dataset() { peka_dataset_free(h); }
};
struct Model {
  peka_model* h = nullptr;
  ~Model() { peka_model_free(h); }
};
struct Report {
  peka_report* h = nullptr;
  ~Report() { peka_report_free(h); }
};
struct Bench {
  peka_bench* h = nullptr;
  ~Bench() { peka_bench_free(h); }
};

// gen-data

struct GenOptions {
  std::string out;
  std::string from_csv;
  std::optional<std::size_t> n, d_latent, d_shared, d_in, genes, clusters, nuisance_dims;
  std::optional<double> noise_img, noise_expr, cluster_spread, rate_scale, within_spread, nuisance_scale;
  std::optional<std::uint64_t> seed;
  std::optional<double> qc_min_counts;
  std::optional<std::size_t> qc_min_genes;
};

void add_gen(CLI::App& app, GenOptions& o) {
  auto* c = app.add_subcommand("gen-data", "Generate a synthetic paired dataset (or import a CSV) as a PEKD file");
  c->add_option("--out", o.out, "Output dataset path")->required();
  c->add_option("--from-csv", o.from_csv, "Import this CSV instead of generating");
  c->add_option("--n", o.n, "Samples");
  c->add_option("--d-latent", o.d_latent, "Latent dimensions");
  c->add_option("--d-shared", o.d_shared, "Latent dimensions visible to the image modality");
  c->add_option("--d-in", o.d_in, "Image feature width");
  c->add_option("--genes", o.genes, "Genes");
  c->add_option("--clusters", o.clusters, "Latent mixture components");
  c->add_option("--noise-img", o.noise_img, "Image feature noise stddev");
  c->add_option("--noise-expr", o.noise_expr, "Extra log-rate noise stddev");
  c->add_option("--cluster-spread", o.cluster_spread, "Stddev of mixture centres");
  c->add_option("--within-spread", o.within_spread, "Within-cluster stddev");
  c->add_option("--rate-scale", o.rate_scale, "Poisson rate multiplier");
  c->add_option("--nuisance-dims", o.nuisance_dims, "Image-only nuisance factors");
  c->add_option("--nuisance-scale", o.nuisance_scale, "Stddev of nuisance factors");
  c->add_option("--seed", o.seed, "Generator seed (default: PEKA_SEED, else 7)");
  c->add_option("--qc-min-counts", o.qc_min_counts, "Drop samples with fewer total counts");
  c->add_option("--qc-min-genes", o.qc_min_genes, "Drop samples with fewer detected genes");
}

int run_gen(const GenOptions& o) {
  json cfg = json::object();
  put(cfg, "n", o.n);
  put(cfg, "d_latent", o.d_latent);
  put(cfg, "d_shared", o.d_shared);
  put(cfg, "d_in", o.d_in);
  put(cfg, "genes", o.genes);
  put(cfg, "cluster_count", o.clusters);
  put(cfg, "noise_img", o.noise_img);
  put(cfg, "noise_expr", o.noise_expr);
  put(cfg, "cluster_spread", o.cluster_spread);
  put(cfg, "within_spread", o.within_spread);
  put(cfg, "rate_scale", o.rate_scale);
  put(cfg, "nuisance_dims", o.nuisance_dims);
  put(cfg, "nuisance_scale", o.nuisance_scale);
  put(cfg, "seed", resolve_seed(o.seed));

  json echo;
  Dataset ds;
  if (!o.from_csv.empty()) {
    if (cfg.size() > 0) usage_error("--from-csv cannot be combined with generator options");
    check(peka_dataset_load_csv(o.from_csv.c_str(), &ds.h));
    echo["source"] = o.from_csv;
  } else {
    const std::string resolved = resolve("generator", cfg);
    check(peka_dataset_generate(resolved.c_str(), &ds.h));
    echo["generator"] = json::parse(resolved);
  }
  if (o.qc_min_counts || o.qc_min_genes) {
    const double min_counts = o.qc_min_counts.value_or(10.0);
    const std::size_t min_genes = o.qc_min_genes.value_or(3);
    Dataset filtered;
    std::size_t dropped = 0;
    check(peka_dataset_qc(ds.h, min_counts, min_genes, &filtered.h, &dropped));
    std::swap(ds.h, filtered.h);
    echo["qc"] = json{{"min_total_counts", min_counts}, {"min_genes_detected", min_genes}, {"dropped", dropped}};
  }
  std::size_t n = 0, d_in = 0, genes = 0;
  check(peka_dataset_shape(ds.h, &n, &d_in, &genes));
  check(peka_dataset_save(ds.h, o.out.c_str()));
  echo["shape"] = json{{"n", n}, {"d_in", d_in}, {"genes", genes}};
  write_text(o.out + ".json", echo.dump(2) + "\n");
  std::cout << "wrote " << o.out << " (n=" << n << ", d_in=" << d_in << ", genes=" << genes << ")\n";
  return kExitOk;
}

// align

struct AlignOptions {
  std::string data, out, history;
  std::optional<std::string> adapter;
  std::vector<std::string> targets;
  std::optional<std::size_t> block_size, lora_rank, adalora_rank, adalora_target_rank, clusters, epochs, batch_size,
      projector_hidden;
  std::optional<double> lora_alpha, lora_dropout, lambda1, lambda2, tau, lr;
  std::optional<std::uint64_t> seed, backbone_seed, teacher_seed;
};

void add_align_knobs(CLI::App* c, AlignOptions& o) {
  c->add_option("--block-size", o.block_size, "Bone block size");
  c->add_option("--lora-rank", o.lora_rank, "LoRA rank");
  c->add_option("--lora-alpha", o.lora_alpha, "LoRA alpha");
  c->add_option("--lora-dropout", o.lora_dropout, "LoRA input dropout");
  c->add_option("--adalora-rank", o.adalora_rank, "AdaLoRA initial rank");
  c->add_option("--adalora-target-rank", o.adalora_target_rank, "AdaLoRA final rank");
  c->add_option("--lambda1", o.lambda1, "Weight of the distillation loss");
  c->add_option("--lambda2", o.lambda2, "Weight of the structure loss");
  c->add_option("--tau", o.tau, "Distillation temperature");
  c->add_option("--clusters", o.clusters, "Pseudo-label clusters");
  c->add_option("--epochs", o.epochs, "Training epochs");
  c->add_option("--batch-size", o.batch_size, "Mini-batch size");
  c->add_option("--lr", o.lr, "Adam learning rate");
  c->add_option("--projector-hidden", o.projector_hidden, "Projector hidden width");
  c->add_option("--backbone-seed", o.backbone_seed, "Seed of the frozen student");
  c->add_option("--teacher-seed", o.teacher_seed, "Seed of the frozen teacher");
}

json align_json(const AlignOptions& o) {
  json cfg = json::object();
  put(cfg, "adapter", o.adapter);
  if (!o.targets.empty()) cfg["targets"] = split_list(o.targets);
  put(cfg, "block_size", o.block_size);
  put(cfg, "lora_rank", o.lora_rank);
  put(cfg, "lora_alpha", o.lora_alpha);
  put(cfg, "lora_dropout", o.lora_dropout);
  put(cfg, "adalora_rank", o.adalora_rank);
  put(cfg, "adalora_target_rank", o.adalora_target_rank);
  put(cfg, "lambda1", o.lambda1);
  put(cfg, "lambda2", o.lambda2);
  put(cfg, "tau", o.tau);
  put(cfg, "clusters", o.clusters);
  put(cfg, "epochs", o.epochs);
  put(cfg, "batch_size", o.batch_size);
  put(cfg, "lr", o.lr);
  put(cfg, "projector_hidden", o.projector_hidden);
  put(cfg, "backbone_seed", o.backbone_seed);
  put(cfg, "teacher_seed", o.teacher_seed);
  return cfg;
}

void add_align(CLI::App& app, AlignOptions& o) {
  auto* c = app.add_subcommand("align", "Train adapters, projector and classifier against the teacher");
  c->add_option("--data", o.data, "Dataset (PEKD)")->required();
  c->add_option("--out", o.out, "Output model path (PEKM)")->required();
  c->add_option("--history", o.history, "History CSV path (default: <out stem>.history.csv)");
  c->add_option("--adapter", o.adapter, "none, bone, peka, lora or adalora");
  c->add_option("--targets", o.targets, "Layers to adapt (default: all)")->delimiter(',');
  c->add_option("--seed", o.seed, "Training seed (default: PEKA_SEED, else 7)");
  add_align_knobs(c, o);
}

int run_align(const AlignOptions& o) {
  json cfg = align_json(o);
  put(cfg, "seed", resolve_seed(o.seed));
  const std::string resolved = resolve("align", cfg);
  Dataset ds;
  check(peka_dataset_load(o.data.c_str(), &ds.h));
  Model model;
  check(peka_align(ds.h, resolved.c_str(), &model.h));
  check(peka_model_save(model.h, o.out.c_str()));
  char* hist = nullptr;
  check(peka_model_history_csv(model.h, &hist));
  const std::string history_path = o.history.empty() ? sibling(o.out, ".history.csv") : o.history;
  write_text(history_path, take(hist));
  double frac = 0.0;
  check(peka_model_trainable_fraction(model.h, &frac));
  std::printf("wrote %s and %s (trainable fraction %.4f)\n", o.out.c_str(), history_path.c_str(), frac);
  return kExitOk;
}

// eval

struct EvalOptions {
  std::string data, model, out, summary;
  std::optional<std::size_t> folds, hvg, pca;
  std::optional<double> ridge_lambda;
  std::optional<std::uint64_t> seed;
  bool projected = false;
};

void add_eval_knobs(CLI::App* c, EvalOptions& o) {
  c->add_option("--folds", o.folds, "Cross-validation folds (>= 2)");
  c->add_option("--hvg", o.hvg, "Highly variable genes to probe");
  c->add_option("--pca", o.pca, "PCA dimensions (clipped to the data)");
  c->add_option("--ridge-lambda", o.ridge_lambda, "Ridge penalty");
  c->add_flag("--projected", o.projected, "Probe the projected embedding instead of the backbone output");
}

json eval_json(const EvalOptions& o) {
  json cfg = json::object();
  put(cfg, "folds", o.folds);
  put(cfg, "hvg", o.hvg);
  put(cfg, "pca_k", o.pca);
  put(cfg, "ridge_lambda", o.ridge_lambda);
  if (o.projected) cfg["use_projected"] = true;
  return cfg;
}

void add_eval(CLI::App& app, EvalOptions& o) {
  auto* c = app.add_subcommand("eval", "Probe model embeddings with PCA + ridge under cross validation");
  c->add_option("--data", o.data, "Dataset (PEKD)")->required();
  c->add_option("--model", o.model, "Model (PEKM)")->required();
  c->add_option("--out", o.out, "Per-gene report CSV")->required();
  c->add_option("--summary", o.summary, "Summary table path (default: <out stem>.txt)");
  c->add_option("--seed", o.seed, "Fold seed (default: PEKA_SEED, else 7)");
  add_eval_knobs(c, o);
}

int run_eval(const EvalOptions& o) {
  json cfg = eval_json(o);
  put(cfg, "seed", resolve_seed(o.seed));
  const std::string resolved = resolve("eval", cfg);
  Dataset ds;
  check(peka_dataset_load(o.data.c_str(), &ds.h));
  Model model;
  check(peka_model_load(o.model.c_str(), &model.h));
  Report rep;
  check(peka_evaluate(model.h, ds.h, resolved.c_str(), &rep.h));
  char* csv = nullptr;
  check(peka_report_csv(rep.h, &csv));
  write_text(o.out, take(csv));
  char* table = nullptr;
  check(peka_report_table(rep.h, &table));
  const std::string summary = take(table);
  write_text(o.summary.empty() ? sibling(o.out, ".txt") : o.summary, summary);
  std::cout << summary;
  return kExitOk;
}

// bench

struct BenchOptions {
  std::vector<std::string> data;
  std::vector<std::string> adapters;
  std::string out;
  std::optional<double> holdout;
  std::optional<std::uint64_t> seed;
  AlignOptions align;
  EvalOptions eval;
};

void add_bench(CLI::App& app, BenchOptions& o) {
  auto* c = app.add_subcommand("bench", "Align and evaluate every adapter on every dataset");
  c->add_option("--data", o.data, "Datasets (PEKD), comma separated or repeated")->required()->delimiter(',');
  c->add_option("--adapters", o.adapters, "Adapters (default: none,lora,peka)")->delimiter(',');
  c->add_option("--out", o.out, "Output directory")->required();
  c->add_option("--holdout", o.holdout, "Align on 1-FRAC of the samples and evaluate on the rest");
  c->add_option("--seed", o.seed, "Seed shared by every cell (default: PEKA_SEED, else 7)");
  c->add_option("--targets", o.align.targets, "Layers to adapt (default: all)")->delimiter(',');
  add_align_knobs(c, o.align);
  add_eval_knobs(c, o.eval);
}

int run_bench(const BenchOptions& o) {
  json cfg{{"datasets", o.data},
           {"adapters", o.adapters.empty() ? std::vector<std::string>{"none", "lora", "peka"} : o.adapters},
           {"out", o.out},
           {"align", align_json(o.align)},
           {"eval", eval_json(o.eval)}};
  put(cfg, "holdout", o.holdout);
  put(cfg, "seed", resolve_seed(o.seed));
  const std::string resolved = resolve("bench", cfg);
  Bench bench;
  check(peka_bench_run(resolved.c_str(), &bench.h));
  char* table = nullptr;
  check(peka_bench_table(bench.h, &table));
  std::cout << take(table);
  std::size_t failed = 0;
  check(peka_bench_failed_cells(bench.h, &failed));
  if (failed > 0) {
    std::cerr << "peka: " << failed << " benchmark cell(s) failed; see " << o.out << "/bench.csv\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// report

struct ReportOptions {
  std::string bench, out, csv;
};

void add_report(CLI::App& app, ReportOptions& o) {
  auto* c = app.add_subcommand("report", "Re-render a benchmark from its persisted eval reports");
  c->add_option("--bench", o.bench, "Benchmark output directory")->required();
  c->add_option("--out", o.out, "Rendered table path")->required();
  c->add_option("--csv", o.csv, "Also write the report CSV here");
}

int run_report(const ReportOptions& o) {
  Bench bench;
  check(peka_bench_load(o.bench.c_str(), &bench.h));
  char* table = nullptr;
  check(peka_bench_table(bench.h, &table));
  const std::string text = take(table);
  write_text(o.out, text);
  if (!o.csv.empty()) {
    char* csv = nullptr;
    check(peka_bench_csv(bench.h, &csv));
    write_text(o.csv, take(csv));
  }
  std::cout << text;
  std::size_t failed = 0;
  check(peka_bench_failed_cells(bench.h, &failed));
  return failed > 0 ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"peka: knowledge transfer from an expression teacher into an image student, with probes and benchmarks"};
  app.set_version_flag("--version", peka_version());
  app.set_config("--config", "", "TOML file mirroring the flags; sections name the subcommand");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  GenOptions gen;
  AlignOptions align;
  EvalOptions eval;
  BenchOptions bench;
  ReportOptions report;
  add_gen(app, gen);
  add_align(app, align);
  add_eval(app, eval);
  add_bench(app, bench);
  add_report(app, report);
  for (auto* sub : app.get_subcommands({})) sub->allow_config_extras(CLI::config_extras_mode::error);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-data") return run_gen(gen);
    if (name == "align") return run_align(align);
    if (name == "eval") return run_eval(eval);
    if (name == "bench") return run_bench(bench);
    return run_report(report);
  } catch (const Failure& f) {
    std::cerr << "peka: " << f.message << "\n";
    return f.exit_code;
  }
}
