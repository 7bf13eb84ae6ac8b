#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "peka/data.hpp"
#include "peka/encoders.hpp"
#include "peka/probe.hpp"
#include "support.hpp"

using namespace peka;
using testing::Gen;

namespace {

// Independent little-endian writer for the dataset layout.
struct Bytes {
  std::vector<std::uint8_t> b;
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u16(std::uint16_t v) {
    b.push_back(std::uint8_t(v));
    b.push_back(std::uint8_t(v >> 8));
  }
  void f64(double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    for (int i = 0; i < 8; ++i) b.push_back(std::uint8_t(v >> (8 * i)));
  }
  void raw(const std::string& s) { b.insert(b.end(), s.begin(), s.end()); }
};

std::vector<std::uint8_t> reference_encoding(const PairedDataset& ds) {
  Bytes w;
  w.raw("PEKD");
  w.u32(1);
  w.u32(std::uint32_t(ds.size()));
  w.u32(std::uint32_t(ds.d_in()));
  w.u32(std::uint32_t(ds.n_genes()));
  for (double v : ds.img.data()) w.f64(v);
  for (double v : ds.expr.data()) w.f64(v);
  for (const auto& g : ds.gene_names) {
    w.u16(std::uint16_t(g.size()));
    w.raw(g);
  }
  return w.b;
}

GeneratorConfig small(std::size_t n, std::uint64_t seed = 7) {
  GeneratorConfig c;
  c.n = n;
  c.seed = seed;
  return c;
}

std::uint64_t row_checksum(const PairedDataset& ds, std::size_t i) {
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&](double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    h = (h ^ v) * 1099511628211ull;
  };
  for (double v : ds.img.row(i)) mix(v);
  for (double v : ds.expr.row(i)) mix(v);
  return h;
}

double frozen_probe(const PairedDataset& ds) {
  const StudentBackbone s = init_student(101, ds.d_in(), {64, 64}, 48);
  return cross_validate(forward_student(s, nullptr, ds.img), ds.expr, ds.gene_names, select_hvg(ds.expr, 50),
                        EvalConfig{})
      .mean_pcc;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("peka_test_data_" + name);
}

}  // namespace

TEST_CASE("generator config validation") {
  GeneratorConfig c;
  CHECK(c.n == 2000);
  CHECK(c.d_latent == 8);
  CHECK(c.d_shared == 4);
  CHECK(c.d_in == 32);
  CHECK(c.genes == 60);
  CHECK(c.cluster_count == 10);
  CHECK(c.noise_img == 0.1);
  CHECK_NOTHROW(c.validate());
  c.d_shared = 9;
  CHECK(testing::error_code_of([&] { c.validate(); }) == ErrorCode::invalid_config);
  c = {};
  c.cluster_count = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.noise_img = -0.1;
  CHECK_THROWS(c.validate());
  CHECK_THROWS(generate_synthetic(c));
}

TEST_CASE("generated datasets are seeded and well formed") {
  const PairedDataset a = generate_synthetic(small(50)), b = generate_synthetic(small(50));
  CHECK(a.img == b.img);
  CHECK(a.expr == b.expr);
  CHECK(a.gene_names == b.gene_names);
  CHECK_FALSE(generate_synthetic(small(50, 8)).img == a.img);
  CHECK(a.size() == 50);
  CHECK(a.d_in() == 32);
  CHECK(a.n_genes() == 60);
  CHECK(a.gene_names.front() == "G0001");
  CHECK(a.gene_names.back() == "G0060");
  CHECK(a.provenance.find("seed") != std::string::npos);
  for (double v : a.expr.data()) {
    CHECK(v >= 0.0);
    CHECK(v == std::floor(v));
  }
}

TEST_CASE("mean count grows with the rate scale") {
  double prev = -1.0;
  for (double scale : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    GeneratorConfig c = small(300);
    c.rate_scale = scale;
    const PairedDataset ds = generate_synthetic(c);
    double mean = 0.0;
    for (double v : ds.expr.data()) mean += v / double(ds.expr.size());
    CHECK(mean > prev);
    prev = mean;
  }
}

TEST_CASE("modality gap dial") {
  std::vector<double> pcc;
  for (std::size_t shared : {8u, 4u, 2u, 0u}) {
    GeneratorConfig c = small(500);
    c.d_shared = shared;
    pcc.push_back(frozen_probe(generate_synthetic(c)));
  }
  CAPTURE(pcc[0]);
  CAPTURE(pcc[1]);
  CAPTURE(pcc[2]);
  CAPTURE(pcc[3]);
  for (std::size_t i = 1; i < pcc.size(); ++i) CHECK(pcc[i] <= pcc[i - 1]);
  CHECK(std::abs(pcc[3]) < 0.15);
}

TEST_CASE("without a gap or noise the image carries the most signal") {
  GeneratorConfig full = small(500);
  full.d_shared = full.d_latent;
  full.noise_img = 0.0;
  full.nuisance_dims = 0;
  GeneratorConfig gap = full;
  gap.d_shared = 4;
  const PairedDataset a = generate_synthetic(full), b = generate_synthetic(gap);
  EvalConfig cfg;
  const double pa = cross_validate(a.img, a.expr, a.gene_names, select_hvg(a.expr, 50), cfg).mean_pcc;
  const double pb = cross_validate(b.img, b.expr, b.gene_names, select_hvg(b.expr, 50), cfg).mean_pcc;
  CHECK(pa > pb);
}

TEST_CASE("qc examples") {
  const PairedDataset ds = generate_synthetic(small(30));
  const QcResult same = qc_filter(ds, 0, 0);
  CHECK(same.dataset.img == ds.img);
  CHECK(same.dataset.expr == ds.expr);
  CHECK(same.dropped == 0);
  CHECK(same.kept == 30);

  PairedDataset z = ds;
  for (double& v : z.expr.row(11)) v = 0.0;
  const QcResult one = qc_filter(z, 0, 1);
  CHECK(one.dropped == 1);
  CHECK(one.dataset.size() == 29);
  for (std::size_t i = 0; i < 29; ++i) CHECK(row_checksum(one.dataset, i) == row_checksum(z, i < 11 ? i : i + 1));

  double max_total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double t = 0.0;
    for (double v : ds.expr.row(i)) t += v;
    max_total = std::max(max_total, t);
  }
  const std::string msg = testing::error_message_of([&] { qc_filter(ds, max_total + 1, 3); });
  CHECK(msg.find("3") != std::string::npos);
  CHECK(testing::error_code_of([&] { qc_filter(ds, max_total + 1, 3); }) == ErrorCode::invalid_config);
}

TEST_CASE("qc keeps surviving pairs intact") {
  testing::for_seeds(10, [](Gen& g) {
    const PairedDataset ds = generate_synthetic(small(g.index(5, 60), g.index(0, 500)));
    const double min_total = g.uniform(0, 200);
    const std::size_t min_genes = g.index(0, 40);
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      double t = 0.0;
      std::size_t nz = 0;
      for (double v : ds.expr.row(i)) {
        t += v;
        nz += v > 0.0;
      }
      if (t >= min_total && nz >= min_genes) expected.push_back(i);
    }
    if (expected.empty()) {
      CHECK_THROWS(qc_filter(ds, min_total, min_genes));
      return;
    }
    const QcResult r = qc_filter(ds, min_total, min_genes);
    REQUIRE(r.dataset.size() == expected.size());
    CHECK(r.kept + r.dropped == ds.size());
    for (std::size_t k = 0; k < expected.size(); ++k) CHECK(row_checksum(r.dataset, k) == row_checksum(ds, expected[k]));
  });
}

TEST_CASE("dataset encoding matches the documented layout and round-trips") {
  const PairedDataset ds = generate_synthetic(small(10));
  const auto bytes = encode_dataset(ds);
  CHECK(bytes == reference_encoding(ds));
  const PairedDataset back = decode_dataset(bytes);
  CHECK(back.img == ds.img);
  CHECK(back.expr == ds.expr);
  CHECK(back.gene_names == ds.gene_names);

  const auto path = temp_file("roundtrip.pekd");
  save_dataset(ds, path.string());
  const PairedDataset loaded = load_dataset(path.string());
  CHECK(loaded.img == ds.img);
  CHECK(loaded.expr == ds.expr);
  CHECK(encode_dataset(loaded) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("round trip preserves arbitrary doubles bit for bit") {
  testing::for_seeds(10, [](Gen& g) {
    PairedDataset ds;
    const std::size_t n = g.index(1, 6), d = g.index(1, 4), G = g.index(1, 4);
    ds.img = g.matrix(n, d, 1e5);
    ds.img(0, 0) = -0.0;
    ds.img(n - 1, d - 1) = 5e-324;
    ds.expr = Matrix(n, G);
    for (double& v : ds.expr.data()) v = std::abs(g.normal(1e-3));
    for (std::size_t j = 0; j < G; ++j) ds.gene_names.push_back("gène_" + std::to_string(j));
    const PairedDataset back = decode_dataset(encode_dataset(ds));
    CHECK(std::memcmp(back.img.data().data(), ds.img.data().data(), n * d * 8) == 0);
    CHECK(std::memcmp(back.expr.data().data(), ds.expr.data().data(), n * G * 8) == 0);
    CHECK(back.gene_names == ds.gene_names);
  });
}

TEST_CASE("corrupt dataset files fail with distinct errors") {
  const PairedDataset ds = generate_synthetic(small(100));
  const auto bytes = encode_dataset(ds);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(testing::error_code_of([&] { decode_dataset(bad_magic); }) == ErrorCode::format);

  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK(testing::error_code_of([&] { decode_dataset(bad_version); }) == ErrorCode::format);

  // Header says 100 samples, payload holds 99.
  const std::size_t row_bytes = (ds.d_in() + ds.n_genes()) * 8;
  std::vector<std::uint8_t> short_payload(bytes.begin(), bytes.end() - std::ptrdiff_t(row_bytes));
  CHECK(testing::error_code_of([&] { decode_dataset(short_payload); }) == ErrorCode::truncated);

  auto extra = bytes;
  extra.push_back(0);
  CHECK(testing::error_code_of([&] { decode_dataset(extra); }) == ErrorCode::format);

  CHECK(testing::error_code_of([&] { decode_dataset({}); }) == ErrorCode::format);
  CHECK(testing::error_code_of([&] { load_dataset("/nonexistent/peka.pekd"); }) == ErrorCode::io);

  for (std::size_t cut = 0; cut < bytes.size(); cut += 997) {
    std::vector<std::uint8_t> prefix(bytes.begin(), bytes.begin() + std::ptrdiff_t(cut));
    const ErrorCode c = testing::error_code_of([&] { decode_dataset(prefix); });
    CHECK((c == ErrorCode::format || c == ErrorCode::truncated));
  }
}

TEST_CASE("csv import") {
  const auto path = temp_file("import.csv");
  {
    std::ofstream out(path);
    out << "sample_id,img_0,img_1,GENE_A,GENE_B\n";
    out << "s1,0.5,-1.25,3,0\n";
    out << "s2,1e-3,2,0,7\n";
  }
  const PairedDataset ds = load_dataset_csv(path.string());
  CHECK(ds.size() == 2);
  CHECK(ds.img == Matrix::from_rows({{0.5, -1.25}, {1e-3, 2}}));
  CHECK(ds.expr == Matrix::from_rows({{3, 0}, {0, 7}}));
  CHECK(ds.gene_names == std::vector<std::string>{"GENE_A", "GENE_B"});

  {
    std::ofstream out(path);
    out << "img_0,GENE_A\n1,2\n";
  }
  CHECK(testing::error_code_of([&] { load_dataset_csv(path.string()); }) == ErrorCode::format);
  {
    std::ofstream out(path);
    out << "sample_id,img_0,GENE_A\ns1,1\n";
  }
  CHECK(testing::error_code_of([&] { load_dataset_csv(path.string()); }) == ErrorCode::format);
  {
    std::ofstream out(path);
    out << "sample_id,img_0,GENE_A\ns1,1,-4\n";
  }
  CHECK(testing::error_code_of([&] { load_dataset_csv(path.string()); }) == ErrorCode::format);
  std::filesystem::remove(path);
}
