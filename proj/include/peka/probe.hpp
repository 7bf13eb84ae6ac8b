#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "peka/matrix.hpp"

namespace peka {

/// Indices of the n_top genes with largest log1p variance, descending; ties
/// to the lower index.
std::vector<std::size_t> select_hvg(const Matrix& expr_counts, std::size_t n_top);

struct PcaModel {
  Matrix mean;        // 1 x d
  Matrix components;  // k x d, orthonormal rows
  std::vector<double> explained_variance;

  Matrix transform(const Matrix& x) const;
  Matrix inverse_transform(const Matrix& z) const;
};

PcaModel fit_pca(const Matrix& x, std::size_t k);

struct RidgeModel {
  Matrix weights;    // k x G
  Matrix intercept;  // 1 x G
  double lambda = 0.0;

  Matrix predict(const Matrix& z) const;
};

/// W = (Zc^T Zc + lambda I)^-1 Zc^T Yc on centred Z and Y; intercept makes the
/// fit pass through the means.
RidgeModel fit_ridge(const Matrix& z, const Matrix& y, double lambda);

struct ProbeModel {
  PcaModel pca;
  RidgeModel ridge;

  Matrix predict(const Matrix& x) const { return ridge.predict(pca.transform(x)); }
};

struct Pcc {
  double value = 0.0;
  bool defined = false;  // false when either input is constant
};

Pcc pearson_pcc(std::span<const double> pred, std::span<const double> truth);

struct EvalConfig {
  std::size_t folds = 5;
  std::size_t hvg = 50;
  std::size_t pca_k = 256;  // clipped to min(pca_k, n_train - 1, d)
  double ridge_lambda = 1.0;
  std::uint64_t seed = 7;
};

struct EvalReport {
  std::vector<std::string> genes;          // evaluated panel
  std::vector<std::vector<Pcc>> fold_pcc;  // [gene][fold]
  std::vector<Pcc> gene_mean;              // mean over defined folds
  std::vector<double> fold_mean;           // mean over genes with a defined PCC in that fold
  double mean_pcc = 0.0;                   // mean over genes of gene_mean (defined genes only)
  std::size_t fold_count = 0;
  std::size_t undefined_count = 0;         // (gene, fold) cells flagged undefined
  std::vector<std::pair<std::string, std::string>> config;  // echo, in insertion order

  std::string to_csv() const;
  std::string to_table() const;
  static EvalReport from_csv(const std::string& text);
  /// Recomputes the summary fields from fold_pcc.
  void summarize();
};

/// Fold assignment: seeded permutation dealt round-robin, sizes differ by <= 1.
std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t folds, std::uint64_t seed);

/// Probes log1p(expr) of the HVG panel from embeddings with PCA + ridge under k-fold CV.
EvalReport cross_validate(const Matrix& embeddings, const Matrix& expr_counts,
                          const std::vector<std::string>& gene_names, const std::vector<std::size_t>& hvg_idx,
                          const EvalConfig& cfg);

}  // namespace peka
