#include "peka/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "peka/adapters.hpp"
#include "peka/encoders.hpp"
#include "peka/error.hpp"
#include "peka/random.hpp"

namespace peka {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kHoldoutStream = 0x401D;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

std::string csv_safe(std::string s) {
  s = one_line(std::move(s));
  std::replace(s.begin(), s.end(), ',', ';');
  return s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + p.string() + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open '" + p.string() + "' for writing");
  out << text;
  if (!out) fail(ErrorCode::io, "failed writing '" + p.string() + "'");
}

std::vector<double> fold_means(const EvalReport& r) { return r.fold_mean; }

}  // namespace

ModelBundle run_align(const PairedDataset& ds, const AlignRunConfig& cfg) {
  ds.validate();
  const StudentBackbone student = init_student(cfg.backbone_seed, ds.d_in(), cfg.student_hidden, cfg.student_emb);
  const TeacherModel teacher = init_teacher(cfg.teacher_seed, ds.n_genes(), cfg.teacher_hidden, cfg.teacher_emb);
  ModelBundle b;
  b.run = cfg;
  b.model = train_alignment(student, teacher, ds, cfg.adapter, cfg.alignment);
  return b;
}

EvalReport run_eval(const ModelBundle& model, const PairedDataset& ds, const EvalRunConfig& cfg) {
  ds.validate();
  const StudentBackbone& bb = model.model.backbone;
  if (bb.d_in() != ds.d_in())
    fail(ErrorCode::shape_mismatch, "model expects image features of width " + std::to_string(bb.d_in()) +
                                        " but the dataset has width " + std::to_string(ds.d_in()));
  if (cfg.probe.hvg > ds.n_genes())
    fail(ErrorCode::invalid_config, "hvg=" + std::to_string(cfg.probe.hvg) + " exceeds the dataset's " +
                                        std::to_string(ds.n_genes()) + " genes");
  const Matrix emb = model.model.embed(ds.img, cfg.use_projected);
  const auto hvg = select_hvg(ds.expr, cfg.probe.hvg);
  EvalReport r = cross_validate(emb, ds.expr, ds.gene_names, hvg, cfg.probe);
  r.config.emplace_back("embedding", cfg.use_projected ? "projected" : "backbone");
  r.config.emplace_back("adapter", to_string(model.model.adapters.kind));
  r.config.emplace_back("align_config", to_json(model.run).dump());
  r.config.emplace_back("dataset", one_line(ds.provenance));
  return r;
}

HoldoutSplit holdout_split(std::size_t n, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "holdout fraction must lie in (0, 1)");
  const auto test_n = static_cast<std::size_t>(std::ceil(fraction * double(n)));
  require(test_n >= 1 && test_n < n, "holdout leaves an empty alignment or evaluation set");
  Rng rng(derive_seed(seed, kHoldoutStream));
  const auto perm = permutation(rng, n);
  HoldoutSplit s;
  s.test.assign(perm.begin(), perm.begin() + test_n);
  s.train.assign(perm.begin() + test_n, perm.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

PairedDataset subset(const PairedDataset& ds, const std::vector<std::size_t>& rows) {
  PairedDataset out;
  out.img = select_rows(ds.img, rows);
  out.expr = select_rows(ds.expr, rows);
  out.gene_names = ds.gene_names;
  out.provenance = ds.provenance + " subset=" + std::to_string(rows.size());
  return out;
}

bool BenchmarkReport::any_failed() const {
  return std::any_of(rows.begin(), rows.end(), [](const BenchRow& r) { return !r.ok; });
}

std::optional<double> BenchmarkReport::delta_vs_none(std::size_t row) const {
  const BenchRow& r = rows.at(row);
  if (!r.ok) return std::nullopt;
  for (const BenchRow& other : rows) {
    if (other.dataset != r.dataset || adapter_kind_from_string(other.adapter) != AdapterKind::none) continue;
    if (!other.ok) return std::nullopt;
    return r.mean_pcc - other.mean_pcc;
  }
  return std::nullopt;
}

bool BenchmarkReport::is_best(std::size_t row) const {
  const BenchRow& r = rows.at(row);
  if (!r.ok) return false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const BenchRow& o = rows[i];
    if (!o.ok || o.dataset != r.dataset) continue;
    // first row wins a tie
    if (o.mean_pcc > r.mean_pcc || (o.mean_pcc == r.mean_pcc && i < row)) return false;
  }
  return true;
}

std::string format_delta(double delta) {
  if (delta == 0.0) return "0.000";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%+.3f", delta);
  return buf;
}

std::string BenchmarkReport::to_csv() const {
  std::ostringstream os;
  os << "dataset,adapter,mean_pcc,delta_vs_none,best,trainable_fraction,fold_pcc,eval_report,status\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const BenchRow& r = rows[i];
    os << r.dataset << "," << r.adapter << ",";
    if (r.ok) {
      const auto d = delta_vs_none(i);
      std::string folds;
      for (std::size_t f = 0; f < r.fold_pcc.size(); ++f) folds += (f ? ";" : "") + fmt17(r.fold_pcc[f]);
      os << fmt17(r.mean_pcc) << "," << (d ? fmt17(*d) : "") << "," << (is_best(i) ? 1 : 0) << ","
         << fmt17(r.trainable_fraction) << "," << folds << "," << r.eval_path << ",ok\n";
    } else {
      os << ",,0,,,," << "failed: " << csv_safe(r.error) << "\n";
    }
  }
  return os.str();
}

std::string BenchmarkReport::to_table() const {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"dataset", "adapter", "mean_pcc", "delta_vs_none", "trainable", "status"});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const BenchRow& r = rows[i];
    if (!r.ok) {
      cells.push_back({r.dataset, r.adapter, "-", "-", "-", "FAILED: " + one_line(r.error)});
      continue;
    }
    const auto d = delta_vs_none(i);
    cells.push_back({r.dataset, r.adapter, fixed(r.mean_pcc, 3) + (is_best(i) ? " *" : ""),
                     d ? format_delta(*d) : "n/a", fixed(r.trainable_fraction, 4), "ok"});
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      line += row[c];
      if (c + 1 < row.size()) line += std::string(width[c] - row[c].size() + 2, ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << "\n";
  }
  os << "* best mean PCC for the dataset\n";
  return os.str();
}

BenchConfig bench_config_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::invalid_config, "bench config: expected a JSON object");
  static const char* known[] = {"datasets", "adapters", "seed", "holdout", "out", "align", "eval"};
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* x) { return k == x; }) == std::end(known))
      fail(ErrorCode::invalid_config, "bench config: unknown key '" + k + "'");
  }
  BenchConfig c;
  try {
    if (j.contains("datasets")) c.datasets = j.at("datasets").get<std::vector<std::string>>();
    if (j.contains("adapters")) c.adapters = j.at("adapters").get<std::vector<std::string>>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("holdout")) c.holdout = j.at("holdout").get<double>();
    if (j.contains("out")) c.out_dir = j.at("out").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_config, std::string("bench config: ") + e.what());
  }
  c.align = align_config_from_json(j.value("align", json::object()));
  c.eval = eval_config_from_json(j.value("eval", json::object()));
  for (const auto& a : c.adapters) adapter_kind_from_string(a);
  require(c.holdout >= 0.0 && c.holdout < 1.0, "holdout fraction must lie in [0, 1)");
  return c;
}

json to_json(const BenchConfig& c) {
  return json{{"datasets", c.datasets}, {"adapters", c.adapters}, {"seed", c.seed},      {"holdout", c.holdout},
              {"out", c.out_dir},        {"align", to_json(c.align)}, {"eval", to_json(c.eval)}};
}

BenchmarkReport run_benchmark(const BenchConfig& cfg) {
  require(!cfg.datasets.empty(), "bench needs at least one dataset");
  require(!cfg.adapters.empty(), "bench needs at least one adapter");
  require(!cfg.out_dir.empty(), "bench needs an output directory");
  require(cfg.holdout >= 0.0 && cfg.holdout < 1.0, "holdout fraction must lie in [0, 1)");
  for (const auto& a : cfg.adapters) adapter_kind_from_string(a);
  std::vector<std::string> labels;
  for (const auto& d : cfg.datasets) {
    std::string label = fs::path(d).stem().string();
    if (std::find(labels.begin(), labels.end(), label) != labels.end())
      fail(ErrorCode::invalid_config, "two datasets share the label '" + label + "'; rename one file");
    labels.push_back(label);
  }

  const fs::path out(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(ErrorCode::io, "cannot create output directory '" + cfg.out_dir + "': " + ec.message());

  AlignRunConfig align = cfg.align;
  align.alignment.seed = cfg.seed;
  EvalRunConfig eval = cfg.eval;
  eval.probe.seed = cfg.seed;

  BenchmarkReport report;
  json timing = json::array();
  json manifest_rows = json::array();
  using clock = std::chrono::steady_clock;
  for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
    std::optional<PairedDataset> train, test;
    std::string load_error;
    try {
      PairedDataset full = load_dataset(cfg.datasets[d]);
      if (cfg.holdout > 0.0) {
        const HoldoutSplit split = holdout_split(full.size(), cfg.holdout, cfg.seed);
        train = subset(full, split.train);
        test = subset(full, split.test);
      } else {
        train = full;
        test = std::move(full);
      }
    } catch (const std::exception& e) {
      load_error = e.what();
    }
    for (const auto& adapter : cfg.adapters) {
      BenchRow row;
      row.dataset = labels[d];
      row.adapter = adapter;
      const std::string stem = labels[d] + "__" + adapter;
      const auto t0 = clock::now();
      try {
        if (!train) fail(ErrorCode::io, load_error);
        AlignRunConfig run = align;
        run.adapter.kind = adapter_kind_from_string(adapter);
        const ModelBundle model = run_align(*train, run);
        const EvalReport rep = run_eval(model, *test, eval);
        row.model_path = stem + ".pekm";
        row.history_path = stem + ".history.csv";
        row.eval_path = stem + ".eval.csv";
        save_model(model, (out / row.model_path).string());
        write_text(out / row.history_path, model.model.history_csv());
        write_text(out / row.eval_path, rep.to_csv());
        row.ok = true;
        row.mean_pcc = rep.mean_pcc;
        row.fold_pcc = fold_means(rep);
        row.trainable_fraction = trainable_fraction(model.model.backbone, model.model.adapters);
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
      const double secs = std::chrono::duration<double>(clock::now() - t0).count();
      timing.push_back(json{{"dataset", row.dataset}, {"adapter", row.adapter}, {"seconds", secs}});
      manifest_rows.push_back(json{{"dataset", row.dataset},
                                   {"dataset_path", cfg.datasets[d]},
                                   {"adapter", row.adapter},
                                   {"ok", row.ok},
                                   {"error", row.error},
                                   {"model", row.model_path},
                                   {"history", row.history_path},
                                   {"eval_report", row.eval_path}});
      report.rows.push_back(std::move(row));
    }
  }

  json manifest{{"format", "peka bench v1"},
                {"seed", cfg.seed},
                {"holdout", cfg.holdout},
                {"datasets", cfg.datasets},
                {"adapters", cfg.adapters},
                {"align", to_json(align)},
                {"eval", to_json(eval)},
                {"rows", manifest_rows}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  write_text(out / "bench.csv", report.to_csv());
  write_text(out / "bench.txt", report.to_table());
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  write_text(out / "bench.timing.json",
             json{{"finished_unix", std::chrono::duration_cast<std::chrono::seconds>(now).count()},
                  {"cells", timing}}
                     .dump(2) +
                 "\n");
  return report;
}

BenchmarkReport load_benchmark(const std::string& out_dir) {
  const fs::path out(out_dir);
  json manifest;
  try {
    manifest = json::parse(read_text(out / "manifest.json"));
  } catch (const json::exception& e) {
    fail(ErrorCode::format, (out / "manifest.json").string() + ": " + e.what());
  }
  BenchmarkReport report;
  try {
    for (const auto& m : manifest.at("rows")) {
      BenchRow row;
      row.dataset = m.at("dataset").get<std::string>();
      row.adapter = m.at("adapter").get<std::string>();
      row.ok = m.at("ok").get<bool>();
      row.error = m.at("error").get<std::string>();
      row.model_path = m.at("model").get<std::string>();
      row.history_path = m.at("history").get<std::string>();
      row.eval_path = m.at("eval_report").get<std::string>();
      if (row.ok) {
        const EvalReport rep = EvalReport::from_csv(read_text(out / row.eval_path));
        row.mean_pcc = rep.mean_pcc;
        row.fold_pcc = fold_means(rep);
        const ModelBundle model = load_model((out / row.model_path).string());
        row.trainable_fraction = trainable_fraction(model.model.backbone, model.model.adapters);
      }
      report.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::format, (out / "manifest.json").string() + ": malformed manifest: " + e.what());
  }
  return report;
}

}  // namespace peka
