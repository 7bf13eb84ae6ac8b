#pragma once

#include <string>

#include <json.hpp>

#include "peka/alignment.hpp"
#include "peka/data.hpp"
#include "peka/probe.hpp"

namespace peka {

/// Everything `align` needs beyond the dataset.
struct AlignRunConfig {
  AlignmentConfig alignment;
  AdapterConfig adapter;
  std::uint64_t backbone_seed = 101;
  std::uint64_t teacher_seed = 202;
  std::vector<std::size_t> student_hidden{64, 64};
  std::size_t student_emb = 48;
  std::vector<std::size_t> teacher_hidden{64};
  std::size_t teacher_emb = 32;
};

struct EvalRunConfig {
  EvalConfig probe;
  bool use_projected = false;
};

// JSON objects are the wire format of the C API. Parsing rejects unknown keys
// and starts from the defaults above for missing ones.
nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const AlignRunConfig& c);
nlohmann::json to_json(const EvalRunConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
AlignRunConfig align_config_from_json(const nlohmann::json& j);
EvalRunConfig eval_config_from_json(const nlohmann::json& j);

/// Parses text that must hold a JSON object; empty text yields {}.
nlohmann::json parse_json_object(const std::string& text, const char* what);

}  // namespace peka
