#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "peka/config.hpp"
#include "peka/data.hpp"
#include "peka/model_io.hpp"
#include "peka/probe.hpp"

namespace peka {

/// Builds the frozen student and teacher from the run seeds and trains the
/// configured adapter on `ds`.
ModelBundle run_align(const PairedDataset& ds, const AlignRunConfig& cfg);

/// Embeds `ds` with the model (merged weights, or through the projector) and
/// probes the top-`hvg` genes with cross validation.
EvalReport run_eval(const ModelBundle& model, const PairedDataset& ds, const EvalRunConfig& cfg);

struct BenchRow {
  std::string dataset;
  std::string adapter;  // label as requested, e.g. "peka"
  bool ok = false;
  std::string error;
  double mean_pcc = 0.0;
  std::vector<double> fold_pcc;
  double trainable_fraction = 0.0;
  std::string model_path;  // relative to the bench output directory
  std::string eval_path;
  std::string history_path;
};

struct BenchmarkReport {
  std::vector<BenchRow> rows;  // declaration order: dataset-major, then adapter

  bool any_failed() const;
  /// Mean PCC minus the `none` row of the same dataset; empty when that row
  /// is missing or failed.
  std::optional<double> delta_vs_none(std::size_t row) const;
  /// True for the highest mean PCC among successful rows of a dataset.
  bool is_best(std::size_t row) const;
  std::string to_csv() const;
  std::string to_table() const;
};

/// Signed three-decimal rendering used in the table; an exact zero prints as "0.000".
std::string format_delta(double delta);

struct BenchConfig {
  std::vector<std::string> datasets;  // PEKD paths
  std::vector<std::string> adapters;  // none, bone, peka, lora, adalora
  AlignRunConfig align;
  EvalRunConfig eval;
  std::uint64_t seed = 7;
  double holdout = 0.0;  // > 0: align on the rest, evaluate on this fraction only
  std::string out_dir;
};

/// Keys: datasets, adapters, seed, holdout, out, align (object), eval (object).
BenchConfig bench_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BenchConfig& c);

/// Runs every (dataset, adapter) cell, persisting model, history and eval
/// files plus manifest.json, bench.csv and bench.txt under out_dir. Cell
/// failures are recorded in the report rather than thrown. Wall-clock timings
/// go to bench.timing.json so the report files stay reproducible.
BenchmarkReport run_benchmark(const BenchConfig& cfg);

/// Rebuilds a report from a bench directory's manifest, re-reading every
/// eval report and model file it references.
BenchmarkReport load_benchmark(const std::string& out_dir);

/// Rows of `ds` kept for alignment and held out for evaluation.
struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
HoldoutSplit holdout_split(std::size_t n, double fraction, std::uint64_t seed);

PairedDataset subset(const PairedDataset& ds, const std::vector<std::size_t>& rows);

}  // namespace peka
