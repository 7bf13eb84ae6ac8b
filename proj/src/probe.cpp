#include "peka/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <tuple>

#include "peka/data.hpp"
#include "peka/error.hpp"
#include "peka/linalg.hpp"
#include "peka/random.hpp"

namespace peka {
namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::vector<std::size_t> select_hvg(const Matrix& expr_counts, std::size_t n_top) {
  const std::size_t g = expr_counts.cols();
  const std::size_t n = expr_counts.rows();
  if (n_top > g)
    fail(ErrorCode::invalid_config, "select_hvg: asked for " + std::to_string(n_top) + " genes but only " +
                                        std::to_string(g) + " exist");
  if (n < 2) fail(ErrorCode::invalid_config, "select_hvg: need at least 2 samples");
  Matrix x = log1p_matrix(expr_counts);
  std::vector<double> var(g, 0.0);
  for (std::size_t j = 0; j < g; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
    mean /= double(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (x(i, j) - mean) * (x(i, j) - mean);
    var[j] = ss / double(n - 1);
  }
  std::vector<std::size_t> idx(g);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t l, std::size_t r) { return var[l] > var[r]; });
  idx.resize(n_top);
  return idx;
}

Matrix PcaModel::transform(const Matrix& x) const {
  if (x.cols() != mean.cols())
    fail(ErrorCode::shape_mismatch, "pca transform: input width " + std::to_string(x.cols()) + " != " +
                                        std::to_string(mean.cols()));
  Matrix c = x;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) -= mean(0, j);
  return matmul(c, transpose(components));
}

Matrix PcaModel::inverse_transform(const Matrix& z) const {
  Matrix x = matmul(z, components);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) += mean(0, j);
  return x;
}

PcaModel fit_pca(const Matrix& x, std::size_t k) {
  const std::size_t lim = std::min(x.rows(), x.cols());
  if (k == 0 || k > lim)
    fail(ErrorCode::invalid_config, "fit_pca: k=" + std::to_string(k) + " out of range [1, " +
                                        std::to_string(lim) + "]");
  PcaModel m;
  m.mean = column_means(x);
  Matrix c = x;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) -= m.mean(0, j);
  ThinSvd svd = svd_thin(c, k);
  m.components = transpose(svd.v);
  const double denom = x.rows() > 1 ? double(x.rows() - 1) : 1.0;
  for (double s : svd.s) m.explained_variance.push_back(s * s / denom);
  return m;
}

Matrix RidgeModel::predict(const Matrix& z) const {
  Matrix y = matmul(z, weights);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += intercept(0, j);
  return y;
}

RidgeModel fit_ridge(const Matrix& z, const Matrix& y, double lambda) {
  if (!(lambda >= 0.0)) fail(ErrorCode::invalid_config, "fit_ridge: lambda must be >= 0");
  if (z.rows() < 1) fail(ErrorCode::invalid_config, "fit_ridge: need at least one sample");
  if (z.rows() != y.rows())
    fail(ErrorCode::shape_mismatch, "fit_ridge: " + z.shape_string() + " features vs " + y.shape_string() + " targets");
  const Matrix zm = column_means(z);
  const Matrix ym = column_means(y);
  Matrix zc = z, yc = y;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) zc(i, j) -= zm(0, j);
    for (std::size_t j = 0; j < y.cols(); ++j) yc(i, j) -= ym(0, j);
  }
  const Matrix zt = transpose(zc);
  Matrix gram = matmul(zt, zc);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += lambda;
  RidgeModel r;
  r.lambda = lambda;
  try {
    r.weights = cholesky_solve(gram, matmul(zt, yc));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::numeric) throw;
    fail(ErrorCode::numeric, "fit_ridge: normal equations are singular (rank-deficient features with lambda=" +
                                 fmt17(lambda) + "); use lambda > 0");
  }
  r.intercept = sub(ym, matmul(zm, r.weights));
  return r;
}

Pcc pearson_pcc(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size())
    fail(ErrorCode::shape_mismatch, "pearson_pcc: length " + std::to_string(pred.size()) + " vs " +
                                        std::to_string(truth.size()));
  const std::size_t n = pred.size();
  if (n < 2) fail(ErrorCode::invalid_config, "pearson_pcc: need at least 2 samples");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += pred[i];
    my += truth[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = pred[i] - mx, dy = truth[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return Pcc{0.0, false};
  const double r = sxy / (std::sqrt(sxx) * std::sqrt(syy));
  return Pcc{std::clamp(r, -1.0, 1.0), true};
}

void EvalReport::summarize() {
  const std::size_t g = fold_pcc.size();
  gene_mean.assign(g, Pcc{});
  fold_mean.assign(fold_count, 0.0);
  undefined_count = 0;
  std::vector<std::size_t> fold_n(fold_count, 0);
  double total = 0.0;
  std::size_t defined_genes = 0;
  for (std::size_t i = 0; i < g; ++i) {
    double s = 0.0;
    std::size_t m = 0;
    for (std::size_t f = 0; f < fold_count; ++f) {
      const Pcc& p = fold_pcc[i][f];
      if (!p.defined) {
        ++undefined_count;
        continue;
      }
      s += p.value;
      ++m;
      fold_mean[f] += p.value;
      ++fold_n[f];
    }
    if (m > 0) {
      gene_mean[i] = Pcc{s / double(m), true};
      total += gene_mean[i].value;
      ++defined_genes;
    }
  }
  for (std::size_t f = 0; f < fold_count; ++f) fold_mean[f] = fold_n[f] ? fold_mean[f] / double(fold_n[f]) : 0.0;
  mean_pcc = defined_genes ? total / double(defined_genes) : 0.0;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "# peka eval report v1\n";
  for (const auto& [k, v] : config) os << "# " << k << "=" << v << "\n";
  os << "# fold_count=" << fold_count << "\n";
  os << "# undefined_count=" << undefined_count << "\n";
  os << "gene,fold,pcc,undefined_flag\n";
  for (std::size_t i = 0; i < genes.size(); ++i) {
    for (std::size_t f = 0; f < fold_count; ++f) {
      const Pcc& p = fold_pcc[i][f];
      os << genes[i] << "," << f << "," << fmt17(p.value) << "," << (p.defined ? 0 : 1) << "\n";
    }
  }
  for (std::size_t i = 0; i < genes.size(); ++i)
    os << genes[i] << ",mean," << fmt17(gene_mean[i].value) << "," << (gene_mean[i].defined ? 0 : 1) << "\n";
  for (std::size_t f = 0; f < fold_count; ++f) os << "ALL," << f << "," << fmt17(fold_mean[f]) << ",0\n";
  os << "ALL,mean," << fmt17(mean_pcc) << ",0\n";
  return os.str();
}

EvalReport EvalReport::from_csv(const std::string& text) {
  EvalReport r;
  std::istringstream is(text);
  std::string line;
  bool header_seen = false;
  std::optional<double> stored_mean;
  std::map<std::string, std::size_t> gene_index;
  std::vector<std::tuple<std::size_t, std::size_t, Pcc>> cells;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
      if (key == "fold_count") {
        r.fold_count = std::stoul(value);
      } else if (key != "undefined_count") {
        r.config.emplace_back(std::move(key), std::move(value));
      }
      continue;
    }
    if (!header_seen) {
      if (line != "gene,fold,pcc,undefined_flag") fail(ErrorCode::format, "eval report: unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    const auto cols = split(line, ',');
    if (cols.size() != 4) fail(ErrorCode::format, "eval report: malformed row '" + line + "'");
    double value = 0.0;
    try {
      value = std::stod(cols[2]);
    } catch (const std::exception&) {
      fail(ErrorCode::format, "eval report: bad number in row '" + line + "'");
    }
    if (cols[0] == "ALL") {
      if (cols[1] == "mean") stored_mean = value;
      continue;
    }
    if (cols[1] == "mean") continue;
    auto [it, inserted] = gene_index.emplace(cols[0], r.genes.size());
    if (inserted) r.genes.push_back(cols[0]);
    std::size_t fold = 0;
    try {
      fold = std::stoul(cols[1]);
    } catch (const std::exception&) {
      fail(ErrorCode::format, "eval report: bad fold in row '" + line + "'");
    }
    cells.emplace_back(it->second, fold, Pcc{value, cols[3] == "0"});
  }
  if (!header_seen) fail(ErrorCode::format, "eval report: missing header");
  r.fold_pcc.assign(r.genes.size(), std::vector<Pcc>(r.fold_count));
  for (const auto& [g, f, p] : cells) {
    if (f >= r.fold_count) fail(ErrorCode::format, "eval report: fold index exceeds fold_count");
    r.fold_pcc[g][f] = p;
  }
  r.summarize();
  if (!stored_mean) fail(ErrorCode::format, "eval report: missing ALL,mean summary row");
  if (std::abs(*stored_mean - r.mean_pcc) > 1e-12)
    fail(ErrorCode::format, "eval report: summary mean " + fmt17(*stored_mean) +
                                " disagrees with per-gene rows (" + fmt17(r.mean_pcc) + ")");
  return r;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char buf[64];
  os << "gene      mean_pcc";
  for (std::size_t f = 0; f < fold_count; ++f) {
    std::snprintf(buf, sizeof buf, "   fold%-3zu", f);
    os << buf;
  }
  os << "\n";
  for (std::size_t i = 0; i < genes.size(); ++i) {
    if (gene_mean[i].defined)
      std::snprintf(buf, sizeof buf, "%-8s %9.4f", genes[i].c_str(), gene_mean[i].value);
    else
      std::snprintf(buf, sizeof buf, "%-8s %9s", genes[i].c_str(), "undef");
    os << buf;
    for (std::size_t f = 0; f < fold_count; ++f) {
      const Pcc& p = fold_pcc[i][f];
      if (p.defined)
        std::snprintf(buf, sizeof buf, " %9.4f", p.value);
      else
        std::snprintf(buf, sizeof buf, " %9s", "undef");
      os << buf;
    }
    os << "\n";
  }
  std::snprintf(buf, sizeof buf, "mean PCC over %zu genes: %.4f", genes.size(), mean_pcc);
  os << buf;
  if (undefined_count) os << " (" << undefined_count << " undefined gene/fold cells excluded)";
  os << "\n";
  return os.str();
}

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t folds, std::uint64_t seed) {
  require(folds >= 2, "cross validation needs folds >= 2");
  require(n >= folds, "cross validation needs at least as many samples as folds");
  Rng rng(derive_seed(seed, 0xF01D));
  const auto perm = permutation(rng, n);
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t i = 0; i < n; ++i) out[i % folds].push_back(perm[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

EvalReport cross_validate(const Matrix& embeddings, const Matrix& expr_counts,
                          const std::vector<std::string>& gene_names, const std::vector<std::size_t>& hvg_idx,
                          const EvalConfig& cfg) {
  const std::size_t n = embeddings.rows();
  if (expr_counts.rows() != n)
    fail(ErrorCode::shape_mismatch, "cross_validate: " + std::to_string(n) + " embeddings vs " +
                                        std::to_string(expr_counts.rows()) + " expression rows");
  require(cfg.folds >= 2, "cross validation needs folds >= 2 (got " + std::to_string(cfg.folds) + ")");
  require(n >= cfg.folds, "cross validation needs n >= folds");
  if (n / cfg.folds < 2)
    fail(ErrorCode::invalid_config, "cross validation: a fold would hold fewer than 2 test samples; use fewer folds");
  require(cfg.pca_k >= 1, "pca dimension must be >= 1");
  for (std::size_t g : hvg_idx)
    if (g >= expr_counts.cols()) fail(ErrorCode::invalid_config, "cross_validate: gene index out of range");

  const Matrix y = log1p_matrix(select_cols(expr_counts, hvg_idx));
  const auto folds = make_folds(n, cfg.folds, cfg.seed);

  EvalReport report;
  for (std::size_t g : hvg_idx) report.genes.push_back(gene_names.at(g));
  report.fold_count = cfg.folds;
  report.fold_pcc.assign(hvg_idx.size(), std::vector<Pcc>(cfg.folds));

  std::vector<bool> in_test(n);
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::fill(in_test.begin(), in_test.end(), false);
    for (std::size_t i : folds[f]) in_test[i] = true;
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < n; ++i)
      if (!in_test[i]) train.push_back(i);
    const Matrix xtr = select_rows(embeddings, train);
    const std::size_t k = std::min({cfg.pca_k, train.size() - 1, embeddings.cols()});
    ProbeModel probe;
    probe.pca = fit_pca(xtr, std::max<std::size_t>(k, 1));
    probe.ridge = fit_ridge(probe.pca.transform(xtr), select_rows(y, train), cfg.ridge_lambda);
    const Matrix pred = probe.predict(select_rows(embeddings, folds[f]));
    const Matrix truth = select_rows(y, folds[f]);
    std::vector<double> pc(pred.rows()), tc(pred.rows());
    for (std::size_t g = 0; g < hvg_idx.size(); ++g) {
      for (std::size_t i = 0; i < pred.rows(); ++i) {
        pc[i] = pred(i, g);
        tc[i] = truth(i, g);
      }
      report.fold_pcc[g][f] = pearson_pcc(pc, tc);
    }
  }
  report.summarize();
  char buf[64];
  report.config.emplace_back("folds", std::to_string(cfg.folds));
  report.config.emplace_back("hvg", std::to_string(hvg_idx.size()));
  report.config.emplace_back("pca_k", std::to_string(cfg.pca_k));
  std::snprintf(buf, sizeof buf, "%.17g", cfg.ridge_lambda);
  report.config.emplace_back("ridge_lambda", buf);
  report.config.emplace_back("cv_seed", std::to_string(cfg.seed));
  return report;
}

}  // namespace peka
