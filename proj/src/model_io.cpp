#include "peka/model_io.hpp"

#include <cstring>
#include <map>

#include "binio.hpp"
#include "peka/error.hpp"

namespace peka {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'P', 'E', 'K', 'M'};
constexpr std::uint32_t kVersion = 1;

class Sections {
 public:
  void put(const std::string& name, const Matrix& m) { order_.emplace_back(name, m); }
  void write(binio::Writer& w) const {
    w.u32(static_cast<std::uint32_t>(order_.size()));
    for (const auto& [name, m] : order_) {
      w.str16(name);
      w.u32(static_cast<std::uint32_t>(m.rows()));
      w.u32(static_cast<std::uint32_t>(m.cols()));
      for (double v : m.data()) w.f64(v);
    }
  }

 private:
  std::vector<std::pair<std::string, Matrix>> order_;
};

class SectionTable {
 public:
  SectionTable(binio::Reader& r) : origin_(r.origin()) {
    const std::uint32_t count = r.u32("section count");
    for (std::uint32_t s = 0; s < count; ++s) {
      std::string name = r.str16("section name");
      const std::uint32_t rows = r.u32("section shape");
      const std::uint32_t cols = r.u32("section shape");
      r.need(std::size_t(rows) * cols * 8, "section payload");
      std::vector<double> data(std::size_t(rows) * cols);
      for (double& v : data) v = r.f64("section payload");
      if (!table_.emplace(name, Matrix::from_data(rows, cols, std::move(data))).second)
        fail(ErrorCode::format, origin_ + ": duplicate section '" + name + "'");
    }
  }
  Matrix take(const std::string& name) {
    auto it = table_.find(name);
    if (it == table_.end()) fail(ErrorCode::format, origin_ + ": missing section '" + name + "'");
    Matrix m = std::move(it->second);
    table_.erase(it);
    return m;
  }
  Matrix take(const std::string& name, std::size_t rows, std::size_t cols) {
    Matrix m = take(name);
    if (m.rows() != rows || m.cols() != cols)
      fail(ErrorCode::format, origin_ + ": section '" + name + "' has shape " + m.shape_string() + ", expected " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
    return m;
  }
  void expect_consumed() const {
    if (!table_.empty()) fail(ErrorCode::format, origin_ + ": unexpected section '" + table_.begin()->first + "'");
  }

 private:
  std::string origin_;
  std::map<std::string, Matrix> table_;
};

void put_dense(Sections& s, const std::string& prefix, const DenseLayer& l) {
  s.put(prefix + l.name + ".weight", l.weight);
  s.put(prefix + l.name + ".bias", l.bias);
}

DenseLayer take_dense(SectionTable& t, const std::string& prefix, const std::string& name, Activation act) {
  DenseLayer l;
  l.name = name;
  l.weight = t.take(prefix + name + ".weight");
  l.bias = t.take(prefix + name + ".bias", 1, l.weight.cols());
  l.activation = act;
  return l;
}

json dense_meta(const DenseLayer& l) { return json{{"name", l.name}, {"activation", to_string(l.activation)}}; }

}  // namespace

std::vector<std::uint8_t> encode_model(const ModelBundle& bundle) {
  const AlignedModel& m = bundle.model;
  json meta;
  meta["run"] = to_json(bundle.run);
  meta["student_layers"] = json::array();
  for (const auto& l : m.backbone.layers) meta["student_layers"].push_back(dense_meta(l));
  meta["projector"] = json::array({dense_meta(m.projector.hidden), dense_meta(m.projector.output)});
  meta["classifier"] = dense_meta(m.classifier.layer);
  meta["adapter_kind"] = to_string(m.adapters.kind);
  meta["adapters"] = json::array();

  Sections s;
  for (const auto& l : m.backbone.layers) put_dense(s, "student.", l);
  put_dense(s, "", m.projector.hidden);
  put_dense(s, "", m.projector.output);
  put_dense(s, "", m.classifier.layer);
  for (const auto& [name, adapter] : m.adapters.adapters) {
    json a{{"layer", name}};
    if (const auto* b = std::get_if<BoneAdapter>(&adapter)) {
      a["block_size"] = b->block_size;
      s.put(name + ".bone_blocks", b->blocks);
    } else if (const auto* l = std::get_if<LoraAdapter>(&adapter)) {
      a["rank"] = l->rank;
      a["alpha"] = l->alpha;
      a["dropout"] = l->dropout;
      s.put(name + ".lora_a", l->a);
      s.put(name + ".lora_b", l->b);
    } else {
      const auto& d = std::get<AdaLoraAdapter>(adapter);
      a["initial_rank"] = d.initial_rank;
      json sched = json::array();
      for (const auto& e : d.schedule) sched.push_back(json{{"step", e.step}, {"target_rank", e.target_rank}});
      a["schedule"] = sched;
      s.put(name + ".adalora_p", d.p);
      s.put(name + ".adalora_lambda", d.lambda);
      s.put(name + ".adalora_q", d.q);
      s.put(name + ".adalora_mask", d.mask_row());
      s.put(name + ".adalora_importance", Matrix::row_vector(d.importance));
    }
    meta["adapters"].push_back(a);
  }
  Matrix hist(m.history.size(), 3);
  for (std::size_t e = 0; e < m.history.size(); ++e) {
    hist(e, 0) = m.history[e].kd;
    hist(e, 1) = m.history[e].structure;
    hist(e, 2) = m.history[e].total;
  }
  s.put("history", hist);

  binio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.str32(meta.dump());
  s.write(w);
  return std::move(w.buffer());
}

ModelBundle decode_model(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorCode::format, origin + ": bad magic, not a PEKM model");
  binio::Reader r(bytes, origin);
  char magic[4];
  r.bytes(magic, 4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) fail(ErrorCode::format, origin + ": unsupported PEKM version " + std::to_string(version));
  json meta;
  try {
    meta = json::parse(r.str32("config blob"));
  } catch (const json::exception& e) {
    fail(ErrorCode::format, origin + ": corrupt config blob: " + e.what());
  }
  SectionTable t(r);
  if (r.remaining() != 0) fail(ErrorCode::format, origin + ": trailing bytes after sections");

  ModelBundle b;
  try {
    b.run = align_config_from_json(meta.at("run"));
    AlignedModel& m = b.model;
    m.config = b.run.alignment;
    m.adapter_config = b.run.adapter;
    for (const auto& l : meta.at("student_layers"))
      m.backbone.layers.push_back(take_dense(t, "student.", l.at("name").get<std::string>(),
                                             activation_from_string(l.at("activation").get<std::string>())));
    if (m.backbone.layers.empty()) fail(ErrorCode::format, origin + ": model has no student layers");
    const auto& pj = meta.at("projector");
    m.projector.hidden = take_dense(t, "", pj.at(0).at("name"), activation_from_string(pj.at(0).at("activation")));
    m.projector.output = take_dense(t, "", pj.at(1).at("name"), activation_from_string(pj.at(1).at("activation")));
    const auto& cl = meta.at("classifier");
    m.classifier.layer = take_dense(t, "", cl.at("name"), activation_from_string(cl.at("activation")));
    m.adapters.kind = adapter_kind_from_string(meta.at("adapter_kind").get<std::string>());
    for (const auto& a : meta.at("adapters")) {
      const std::string name = a.at("layer");
      const Matrix& w = m.backbone.layer(name).weight;
      switch (m.adapters.kind) {
        case AdapterKind::bone: {
          BoneAdapter ad{name, a.at("block_size").get<std::size_t>(), {}};
          ad.blocks = t.take(name + ".bone_blocks", ad.block_size, w.cols());
          m.adapters.adapters.emplace(name, std::move(ad));
          break;
        }
        case AdapterKind::lora: {
          LoraAdapter ad;
          ad.target = name;
          ad.rank = a.at("rank");
          ad.alpha = a.at("alpha");
          ad.dropout = a.at("dropout");
          ad.a = t.take(name + ".lora_a", ad.rank, w.cols());
          ad.b = t.take(name + ".lora_b", w.rows(), ad.rank);
          m.adapters.adapters.emplace(name, std::move(ad));
          break;
        }
        case AdapterKind::adalora: {
          AdaLoraAdapter ad;
          ad.target = name;
          ad.initial_rank = a.at("initial_rank");
          for (const auto& e : a.at("schedule")) ad.schedule.push_back({e.at("step"), e.at("target_rank")});
          ad.p = t.take(name + ".adalora_p", w.rows(), ad.initial_rank);
          ad.lambda = t.take(name + ".adalora_lambda", 1, ad.initial_rank);
          ad.q = t.take(name + ".adalora_q", ad.initial_rank, w.cols());
          const Matrix mask = t.take(name + ".adalora_mask", 1, ad.initial_rank);
          for (double v : mask.data()) ad.mask.push_back(v != 0.0);
          const Matrix imp = t.take(name + ".adalora_importance", 1, ad.initial_rank);
          ad.importance.assign(imp.data().begin(), imp.data().end());
          m.adapters.adapters.emplace(name, std::move(ad));
          break;
        }
        case AdapterKind::none: fail(ErrorCode::format, origin + ": adapter entries in a pass-through model");
      }
    }
    const Matrix hist = t.take("history");
    if (hist.cols() != 3) fail(ErrorCode::format, origin + ": history section must have 3 columns");
    for (std::size_t e = 0; e < hist.rows(); ++e) m.history.push_back({hist(e, 0), hist(e, 1), hist(e, 2)});
  } catch (const json::exception& e) {
    fail(ErrorCode::format, origin + ": malformed model metadata: " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::format || e.code() == ErrorCode::truncated) throw;
    fail(ErrorCode::format, origin + ": " + e.what());
  }
  t.expect_consumed();
  return b;
}

void save_model(const ModelBundle& bundle, const std::string& path) { binio::write_file(path, encode_model(bundle)); }

ModelBundle load_model(const std::string& path) { return decode_model(binio::read_file(path), path); }

}  // namespace peka
