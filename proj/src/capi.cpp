#include "peka/peka.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <new>
#include <sstream>
#include <string>

#include "peka/adapters.hpp"
#include "peka/config.hpp"
#include "peka/data.hpp"
#include "peka/error.hpp"
#include "peka/model_io.hpp"
#include "peka/pipeline.hpp"
#include "peka/probe.hpp"

struct peka_dataset {
  peka::PairedDataset ds;
};
struct peka_model {
  peka::ModelBundle bundle;
};
struct peka_report {
  peka::EvalReport report;
};
struct peka_bench {
  peka::BenchmarkReport report;
};

namespace {

thread_local std::string g_last_error;

peka_status to_status(peka::ErrorCode c) {
  switch (c) {
    case peka::ErrorCode::invalid_config: return PEKA_ERR_INVALID_CONFIG;
    case peka::ErrorCode::shape_mismatch: return PEKA_ERR_SHAPE;
    case peka::ErrorCode::format: return PEKA_ERR_FORMAT;
    case peka::ErrorCode::truncated: return PEKA_ERR_TRUNCATED;
    case peka::ErrorCode::io: return PEKA_ERR_IO;
    case peka::ErrorCode::numeric: return PEKA_ERR_NUMERIC;
    case peka::ErrorCode::internal: return PEKA_ERR_INTERNAL;
  }
  return PEKA_ERR_INTERNAL;
}

template <class F>
peka_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return PEKA_OK;
  } catch (const peka::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return PEKA_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PEKA_ERR_INTERNAL;
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

nlohmann::json parse(const char* text, const char* what) { return peka::parse_json_object(text ? text : "", what); }

std::string read_text(const char* path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) peka::fail(peka::ErrorCode::io, std::string("cannot open '") + path + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

extern "C" {

const char* peka_last_error(void) { return g_last_error.c_str(); }

const char* peka_version(void) { return "1.0.0"; }

const char* peka_status_name(peka_status status) {
  switch (status) {
    case PEKA_OK: return "ok";
    case PEKA_ERR_INVALID_CONFIG: return "invalid_config";
    case PEKA_ERR_SHAPE: return "shape_mismatch";
    case PEKA_ERR_FORMAT: return "format";
    case PEKA_ERR_TRUNCATED: return "truncated";
    case PEKA_ERR_IO: return "io";
    case PEKA_ERR_NUMERIC: return "numeric";
    case PEKA_ERR_INTERNAL: return "internal";
    case PEKA_ERR_NULL_ARGUMENT: return "null_argument";
  }
  return "unknown";
}

void peka_string_free(char* s) { std::free(s); }

peka_status peka_config_resolve(const char* kind, const char* config_json, char** out_json) {
  if (!kind || !out_json) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] {
    const std::string k = kind;
    nlohmann::json resolved;
    if (k == "generator")
      resolved = peka::to_json(peka::generator_config_from_json(parse(config_json, "generator config")));
    else if (k == "align")
      resolved = peka::to_json(peka::align_config_from_json(parse(config_json, "align config")));
    else if (k == "eval")
      resolved = peka::to_json(peka::eval_config_from_json(parse(config_json, "eval config")));
    else if (k == "bench")
      resolved = peka::to_json(peka::bench_config_from_json(parse(config_json, "bench config")));
    else
      peka::fail(peka::ErrorCode::invalid_config, "unknown config kind '" + k + "'");
    *out_json = copy_string(resolved.dump());
  });
}

peka_status peka_dataset_generate(const char* config_json, peka_dataset** out) {
  if (!out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] {
    const auto cfg = peka::generator_config_from_json(parse(config_json, "generator config"));
    *out = new peka_dataset{peka::generate_synthetic(cfg)};
  });
}

peka_status peka_dataset_load(const char* path, peka_dataset** out) {
  if (!path || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = new peka_dataset{peka::load_dataset(path)}; });
}

peka_status peka_dataset_load_csv(const char* path, peka_dataset** out) {
  if (!path || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = new peka_dataset{peka::load_dataset_csv(path)}; });
}

peka_status peka_dataset_save(const peka_dataset* ds, const char* path) {
  if (!ds || !path) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { peka::save_dataset(ds->ds, path); });
}

peka_status peka_dataset_qc(const peka_dataset* ds, double min_total_counts, size_t min_genes_detected,
                            peka_dataset** out, size_t* dropped) {
  if (!ds || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] {
    peka::QcResult r = peka::qc_filter(ds->ds, min_total_counts, min_genes_detected);
    if (dropped) *dropped = r.dropped;
    *out = new peka_dataset{std::move(r.dataset)};
  });
}

peka_status peka_dataset_shape(const peka_dataset* ds, size_t* n, size_t* d_in, size_t* genes) {
  if (!ds) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  if (n) *n = ds->ds.size();
  if (d_in) *d_in = ds->ds.d_in();
  if (genes) *genes = ds->ds.n_genes();
  return PEKA_OK;
}

peka_status peka_dataset_provenance(const peka_dataset* ds, char** out) {
  if (!ds || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = copy_string(ds->ds.provenance); });
}

void peka_dataset_free(peka_dataset* ds) { delete ds; }

peka_status peka_align(const peka_dataset* ds, const char* config_json, peka_model** out) {
  if (!ds || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] {
    const auto cfg = peka::align_config_from_json(parse(config_json, "align config"));
    *out = new peka_model{peka::run_align(ds->ds, cfg)};
  });
}

peka_status peka_model_save(const peka_model* model, const char* path) {
  if (!model || !path) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { peka::save_model(model->bundle, path); });
}

peka_status peka_model_load(const char* path, peka_model** out) {
  if (!path || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = new peka_model{peka::load_model(path)}; });
}

peka_status peka_model_history_csv(const peka_model* model, char** out) {
  if (!model || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = copy_string(model->bundle.model.history_csv()); });
}

peka_status peka_model_config_json(const peka_model* model, char** out) {
  if (!model || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = copy_string(peka::to_json(model->bundle.run).dump()); });
}

peka_status peka_model_trainable_fraction(const peka_model* model, double* out) {
  if (!model || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard(
      [&] { *out = peka::trainable_fraction(model->bundle.model.backbone, model->bundle.model.adapters); });
}

void peka_model_free(peka_model* model) { delete model; }

peka_status peka_evaluate(const peka_model* model, const peka_dataset* ds, const char* config_json,
                          peka_report** out) {
  if (!model || !ds || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] {
    const auto cfg = peka::eval_config_from_json(parse(config_json, "eval config"));
    *out = new peka_report{peka::run_eval(model->bundle, ds->ds, cfg)};
  });
}

peka_status peka_report_load(const char* path, peka_report** out) {
  if (!path || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = new peka_report{peka::EvalReport::from_csv(read_text(path))}; });
}

peka_status peka_report_csv(const peka_report* report, char** out) {
  if (!report || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = copy_string(report->report.to_csv()); });
}

peka_status peka_report_table(const peka_report* report, char** out) {
  if (!report || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = copy_string(report->report.to_table()); });
}

peka_status peka_report_mean_pcc(const peka_report* report, double* out) {
  if (!report || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  *out = report->report.mean_pcc;
  return PEKA_OK;
}

void peka_report_free(peka_report* report) { delete report; }

peka_status peka_bench_run(const char* config_json, peka_bench** out) {
  if (!out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] {
    const auto cfg = peka::bench_config_from_json(parse(config_json, "bench config"));
    *out = new peka_bench{peka::run_benchmark(cfg)};
  });
}

peka_status peka_bench_load(const char* dir, peka_bench** out) {
  if (!dir || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = new peka_bench{peka::load_benchmark(dir)}; });
}

peka_status peka_bench_csv(const peka_bench* bench, char** out) {
  if (!bench || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = copy_string(bench->report.to_csv()); });
}

peka_status peka_bench_table(const peka_bench* bench, char** out) {
  if (!bench || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  return guard([&] { *out = copy_string(bench->report.to_table()); });
}

peka_status peka_bench_failed_cells(const peka_bench* bench, size_t* out) {
  if (!bench || !out) return g_last_error = "null argument", PEKA_ERR_NULL_ARGUMENT;
  size_t failed = 0;
  for (const auto& r : bench->report.rows) failed += r.ok ? 0 : 1;
  *out = failed;
  return PEKA_OK;
}

void peka_bench_free(peka_bench* bench) { delete bench; }

}  // extern "C"
