/* C interface to the peka library.
 *
 * Objects are opaque handles released with their *_free function. Every call
 * returns a peka_status; on failure peka_last_error() describes the problem
 * (the message is thread-local and valid until the next call on the same
 * thread). Strings returned through char** are heap copies owned by the
 * caller and must be released with peka_string_free. Configurations are JSON
 * objects; missing keys take their defaults and unknown keys are rejected.
 */
#ifndef PEKA_H
#define PEKA_H

#include <stddef.h>

#if defined(_WIN32)
#define PEKA_API __declspec(dllexport)
#else
#define PEKA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum peka_status {
  PEKA_OK = 0,
  PEKA_ERR_INVALID_CONFIG = 1,
  PEKA_ERR_SHAPE = 2,
  PEKA_ERR_FORMAT = 3,
  PEKA_ERR_TRUNCATED = 4,
  PEKA_ERR_IO = 5,
  PEKA_ERR_NUMERIC = 6,
  PEKA_ERR_INTERNAL = 7,
  PEKA_ERR_NULL_ARGUMENT = 8
} peka_status;

typedef struct peka_dataset peka_dataset;
typedef struct peka_model peka_model;
typedef struct peka_report peka_report;
typedef struct peka_bench peka_bench;

PEKA_API const char* peka_last_error(void);
PEKA_API const char* peka_version(void);
PEKA_API const char* peka_status_name(peka_status status);
PEKA_API void peka_string_free(char* s);

/* kind is "generator", "align", "eval" or "bench". Writes the fully resolved
 * configuration (defaults filled in) as JSON. */
PEKA_API peka_status peka_config_resolve(const char* kind, const char* config_json, char** out_json);

/* Datasets */
PEKA_API peka_status peka_dataset_generate(const char* config_json, peka_dataset** out);
PEKA_API peka_status peka_dataset_load(const char* path, peka_dataset** out);
PEKA_API peka_status peka_dataset_load_csv(const char* path, peka_dataset** out);
PEKA_API peka_status peka_dataset_save(const peka_dataset* ds, const char* path);
PEKA_API peka_status peka_dataset_qc(const peka_dataset* ds, double min_total_counts, size_t min_genes_detected,
                                     peka_dataset** out, size_t* dropped);
PEKA_API peka_status peka_dataset_shape(const peka_dataset* ds, size_t* n, size_t* d_in, size_t* genes);
PEKA_API peka_status peka_dataset_provenance(const peka_dataset* ds, char** out);
PEKA_API void peka_dataset_free(peka_dataset* ds);

/* Alignment */
PEKA_API peka_status peka_align(const peka_dataset* ds, const char* config_json, peka_model** out);
PEKA_API peka_status peka_model_save(const peka_model* model, const char* path);
PEKA_API peka_status peka_model_load(const char* path, peka_model** out);
PEKA_API peka_status peka_model_history_csv(const peka_model* model, char** out);
PEKA_API peka_status peka_model_config_json(const peka_model* model, char** out);
PEKA_API peka_status peka_model_trainable_fraction(const peka_model* model, double* out);
PEKA_API void peka_model_free(peka_model* model);

/* Evaluation */
PEKA_API peka_status peka_evaluate(const peka_model* model, const peka_dataset* ds, const char* config_json,
                                   peka_report** out);
PEKA_API peka_status peka_report_load(const char* path, peka_report** out);
PEKA_API peka_status peka_report_csv(const peka_report* report, char** out);
PEKA_API peka_status peka_report_table(const peka_report* report, char** out);
PEKA_API peka_status peka_report_mean_pcc(const peka_report* report, double* out);
PEKA_API void peka_report_free(peka_report* report);

/* Benchmark. peka_bench_run returns PEKA_OK even when cells fail; check
 * peka_bench_failed_cells. */
PEKA_API peka_status peka_bench_run(const char* config_json, peka_bench** out);
PEKA_API peka_status peka_bench_load(const char* dir, peka_bench** out);
PEKA_API peka_status peka_bench_csv(const peka_bench* bench, char** out);
PEKA_API peka_status peka_bench_table(const peka_bench* bench, char** out);
PEKA_API peka_status peka_bench_failed_cells(const peka_bench* bench, size_t* out);
PEKA_API void peka_bench_free(peka_bench* bench);

#ifdef __cplusplus
}
#endif

#endif
