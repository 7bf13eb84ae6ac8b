#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peka/matrix.hpp"

namespace peka {

/// Row i of `img` and row i of `expr` describe the same tile.
struct PairedDataset {
  Matrix img;   // n x d_in tile features
  Matrix expr;  // n x G non-negative counts
  std::vector<std::string> gene_names;
  std::string provenance;

  std::size_t size() const { return img.rows(); }
  std::size_t d_in() const { return img.cols(); }
  std::size_t n_genes() const { return expr.cols(); }
  void validate() const;
};

struct GeneratorConfig {
  std::size_t n = 2000;
  std::size_t d_latent = 8;
  std::size_t d_shared = 4;
  std::size_t d_in = 32;
  std::size_t genes = 60;
  double noise_img = 0.1;
  double noise_expr = 0.0;  // extra Gaussian jitter on the log-rate; Poisson noise is always present
  std::size_t cluster_count = 10;
  double cluster_spread = 2.5;  // stddev of mixture centres relative to unit within-cluster spread
  double rate_scale = 4.0;      // multiplies the softplus rate
  double within_spread = 0.5;   // within-cluster stddev of every latent dim
  std::size_t nuisance_dims = 4;  // image-only factors mixed into the image MLP
  double nuisance_scale = 2.0;
  std::uint64_t seed = 7;

  void validate() const;
  std::string describe() const;
};

/// Latent mixture -> Poisson expression over all latent dims, image features
/// from a tanh MLP of only the first d_shared dims plus Gaussian noise.
PairedDataset generate_synthetic(const GeneratorConfig& cfg);

struct QcResult {
  PairedDataset dataset;
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

QcResult qc_filter(const PairedDataset& ds, double min_total_counts, std::size_t min_genes_detected);

/// Binary PEKD container, little-endian; see README for the layout.
void save_dataset(const PairedDataset& ds, const std::string& path);
PairedDataset load_dataset(const std::string& path);
std::vector<std::uint8_t> encode_dataset(const PairedDataset& ds);
PairedDataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

/// CSV with a `sample_id` column, `img_<k>` feature columns and one column per gene.
PairedDataset load_dataset_csv(const std::string& path);

/// log1p of every entry.
Matrix log1p_matrix(const Matrix& counts);

}  // namespace peka
