#include "peka/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "binio.hpp"
#include "peka/error.hpp"
#include "peka/random.hpp"

namespace peka {
namespace {

constexpr char kMagic[4] = {'P', 'E', 'K', 'D'};
constexpr std::uint32_t kVersion = 1;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

std::string gene_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "G%04zu", i + 1);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void PairedDataset::validate() const {
  if (img.rows() != expr.rows())
    fail(ErrorCode::shape_mismatch, "dataset has " + std::to_string(img.rows()) + " image rows but " +
                                        std::to_string(expr.rows()) + " expression rows");
  if (gene_names.size() != expr.cols())
    fail(ErrorCode::shape_mismatch, "dataset has " + std::to_string(gene_names.size()) + " gene names for " +
                                        std::to_string(expr.cols()) + " expression columns");
  if (!img.all_finite() || !expr.all_finite()) fail(ErrorCode::format, "dataset contains non-finite values");
  for (double v : expr.data())
    if (v < 0.0) fail(ErrorCode::format, "dataset contains negative expression counts");
}

void GeneratorConfig::validate() const {
  require(n >= 1, "generator: n must be >= 1");
  require(d_latent >= 1, "generator: d_latent must be >= 1");
  require(d_shared <= d_latent, "generator: d_shared (" + std::to_string(d_shared) + ") exceeds d_latent (" +
                                    std::to_string(d_latent) + ")");
  require(d_in >= 1, "generator: d_in must be >= 1");
  require(genes >= 1, "generator: genes must be >= 1");
  require(cluster_count >= 1, "generator: cluster_count must be >= 1");
  require(noise_img >= 0.0 && noise_expr >= 0.0, "generator: noise levels must be >= 0");
  require(cluster_spread >= 0.0, "generator: cluster_spread must be >= 0");
  require(rate_scale > 0.0, "generator: rate_scale must be > 0");
  require(within_spread >= 0.0 && nuisance_scale >= 0.0, "generator: within_spread and nuisance_scale must be >= 0");
}

std::string GeneratorConfig::describe() const {
  std::ostringstream os;
  os << "synthetic n=" << n << " d_latent=" << d_latent << " d_shared=" << d_shared << " d_in=" << d_in
     << " genes=" << genes << " noise_img=" << noise_img << " noise_expr=" << noise_expr
     << " cluster_count=" << cluster_count << " cluster_spread=" << cluster_spread << " rate_scale=" << rate_scale
     << " within_spread=" << within_spread << " nuisance_dims=" << nuisance_dims
     << " nuisance_scale=" << nuisance_scale << " seed=" << seed;
  return os.str();
}

PairedDataset generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  // Model parameters first, so they do not depend on n.
  Matrix centres = gaussian_matrix(rng, cfg.cluster_count, cfg.d_latent, cfg.cluster_spread);
  Matrix loading = gaussian_matrix(rng, cfg.d_latent, cfg.genes, 1.0 / std::sqrt(double(cfg.d_latent)));
  Matrix gene_offset = gaussian_matrix(rng, 1, cfg.genes, 0.5);
  const std::size_t hidden = cfg.d_in;
  const std::size_t img_inputs = std::max<std::size_t>(cfg.d_shared + cfg.nuisance_dims, 1);
  Matrix img_w1 = gaussian_matrix(rng, img_inputs, hidden, 1.0 / std::sqrt(double(img_inputs)));
  Matrix img_b1 = gaussian_matrix(rng, 1, hidden, 0.5);
  Matrix img_w2 = gaussian_matrix(rng, hidden, cfg.d_in, 1.5 / std::sqrt(double(hidden)));
  Matrix img_b2 = gaussian_matrix(rng, 1, cfg.d_in, 0.5);

  std::uniform_int_distribution<std::size_t> pick(0, cfg.cluster_count - 1);
  std::normal_distribution<double> unit(0.0, 1.0);

  Matrix z(cfg.n, cfg.d_latent);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const std::size_t c = pick(rng);
    for (std::size_t k = 0; k < cfg.d_latent; ++k) z(i, k) = centres(c, k) + cfg.within_spread * unit(rng);
  }

  PairedDataset ds;
  ds.expr = Matrix(cfg.n, cfg.genes);
  Matrix logit = matmul(z, loading);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    for (std::size_t g = 0; g < cfg.genes; ++g) {
      double eta = logit(i, g) + gene_offset(0, g);
      if (cfg.noise_expr > 0.0) eta += cfg.noise_expr * unit(rng);
      std::poisson_distribution<long long> pois(cfg.rate_scale * softplus(eta));
      ds.expr(i, g) = static_cast<double>(pois(rng));
    }
  }

  Matrix nuisance = gaussian_matrix(rng, cfg.n, cfg.nuisance_dims, cfg.nuisance_scale);
  ds.img = Matrix(cfg.n, cfg.d_in);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    std::vector<double> h(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
      double a = img_b1(0, j);
      for (std::size_t k = 0; k < cfg.d_shared; ++k) a += z(i, k) * img_w1(k, j);
      for (std::size_t k = 0; k < cfg.nuisance_dims; ++k) a += nuisance(i, k) * img_w1(cfg.d_shared + k, j);
      h[j] = std::tanh(a);
    }
    for (std::size_t j = 0; j < cfg.d_in; ++j) {
      double a = img_b2(0, j);
      for (std::size_t k = 0; k < hidden; ++k) a += h[k] * img_w2(k, j);
      ds.img(i, j) = std::tanh(a);
    }
  }
  if (cfg.noise_img > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_img);
    for (double& v : ds.img.data()) v += noise(rng);
  }

  for (std::size_t g = 0; g < cfg.genes; ++g) ds.gene_names.push_back(gene_name(g));
  ds.provenance = cfg.describe();
  return ds;
}

QcResult qc_filter(const PairedDataset& ds, double min_total_counts, std::size_t min_genes_detected) {
  require(min_total_counts >= 0.0, "qc_filter: min_total_counts must be >= 0");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double total = 0.0;
    std::size_t detected = 0;
    for (double v : ds.expr.row(i)) {
      total += v;
      detected += v != 0.0;
    }
    if (total >= min_total_counts && detected >= min_genes_detected) keep.push_back(i);
  }
  if (keep.empty()) {
    std::ostringstream os;
    os << "qc_filter removed every sample (min_total_counts=" << min_total_counts
       << ", min_genes_detected=" << min_genes_detected << ")";
    fail(ErrorCode::invalid_config, os.str());
  }
  QcResult r;
  r.dataset.img = select_rows(ds.img, keep);
  r.dataset.expr = select_rows(ds.expr, keep);
  r.dataset.gene_names = ds.gene_names;
  r.dataset.provenance = ds.provenance;
  r.kept = keep.size();
  r.dropped = ds.size() - keep.size();
  return r;
}

std::vector<std::uint8_t> encode_dataset(const PairedDataset& ds) {
  ds.validate();
  binio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.d_in()));
  w.u32(static_cast<std::uint32_t>(ds.n_genes()));
  for (double v : ds.img.data()) w.f64(v);
  for (double v : ds.expr.data()) w.f64(v);
  for (const auto& g : ds.gene_names) w.str16(g);
  return std::move(w.buffer());
}

PairedDataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  binio::Reader r(bytes, origin);
  char magic[4];
  if (bytes.size() < 4) fail(ErrorCode::format, origin + ": not a PEKD dataset (file too short for magic)");
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) fail(ErrorCode::format, origin + ": bad magic, not a PEKD dataset");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion)
    fail(ErrorCode::format, origin + ": unsupported PEKD version " + std::to_string(version));
  const std::uint32_t n = r.u32("header");
  const std::uint32_t d_in = r.u32("header");
  const std::uint32_t genes = r.u32("header");
  const std::uint64_t payload = (std::uint64_t(n) * d_in + std::uint64_t(n) * genes) * 8;
  if (r.remaining() < payload)
    fail(ErrorCode::truncated, origin + ": header promises " + std::to_string(n) + " samples but payload is " +
                                   std::to_string(r.remaining()) + " bytes (need at least " +
                                   std::to_string(payload) + ")");
  std::vector<double> img(std::size_t(n) * d_in), expr(std::size_t(n) * genes);
  for (double& v : img) v = r.f64("image features");
  for (double& v : expr) v = r.f64("expression counts");
  PairedDataset ds;
  ds.img = Matrix::from_data(n, d_in, std::move(img));
  ds.expr = Matrix::from_data(n, genes, std::move(expr));
  for (std::uint32_t g = 0; g < genes; ++g) ds.gene_names.push_back(r.str16("gene names"));
  if (r.remaining() != 0)
    fail(ErrorCode::format, origin + ": " + std::to_string(r.remaining()) +
                                " trailing bytes; dimension header inconsistent with payload");
  ds.provenance = "file " + origin;
  ds.validate();
  return ds;
}

void save_dataset(const PairedDataset& ds, const std::string& path) {
  binio::write_file(path, encode_dataset(ds));
}

PairedDataset load_dataset(const std::string& path) { return decode_dataset(binio::read_file(path), path); }

PairedDataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::format, path + ": empty CSV");
  const auto header = split_csv_line(line);
  std::vector<std::size_t> img_cols, gene_cols;
  std::vector<std::string> genes;
  bool has_id = false;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "sample_id") {
      has_id = true;
    } else if (header[c].rfind("img_", 0) == 0) {
      img_cols.push_back(c);
    } else {
      gene_cols.push_back(c);
      genes.push_back(header[c]);
    }
  }
  if (!has_id) fail(ErrorCode::format, path + ": CSV header lacks a sample_id column");
  if (img_cols.empty() || gene_cols.empty())
    fail(ErrorCode::format, path + ": CSV needs img_* feature columns and at least one gene column");
  std::vector<double> img, expr;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      fail(ErrorCode::format, path + ": row " + std::to_string(n + 1) + " has " + std::to_string(cells.size()) +
                                  " cells, header has " + std::to_string(header.size()));
    auto parse = [&](std::size_t c) {
      try {
        std::size_t used = 0;
        double v = std::stod(cells[c], &used);
        if (used != cells[c].size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        fail(ErrorCode::format, path + ": unparsable number '" + cells[c] + "' in row " + std::to_string(n + 1));
      }
    };
    for (std::size_t c : img_cols) img.push_back(parse(c));
    for (std::size_t c : gene_cols) expr.push_back(parse(c));
    ++n;
  }
  PairedDataset ds;
  ds.img = Matrix::from_data(n, img_cols.size(), std::move(img));
  ds.expr = Matrix::from_data(n, gene_cols.size(), std::move(expr));
  ds.gene_names = std::move(genes);
  ds.provenance = "csv " + path;
  ds.validate();
  return ds;
}

Matrix log1p_matrix(const Matrix& counts) {
  Matrix out = counts;
  for (double& v : out.data()) v = std::log1p(v);
  return out;
}

}  // namespace peka
