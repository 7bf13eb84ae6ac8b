#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peka/alignment.hpp"
#include "peka/config.hpp"

namespace peka {

/// A trained model plus the run configuration that produced it.
struct ModelBundle {
  AlignedModel model;
  AlignRunConfig run;
};

// PEKM container: "PEKM", u32 version, u32-length JSON config blob, u32
// section count, then per section a u16-length name, u32 rows, u32 cols and
// rows*cols little-endian doubles.
std::vector<std::uint8_t> encode_model(const ModelBundle& bundle);
ModelBundle decode_model(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");
void save_model(const ModelBundle& bundle, const std::string& path);
ModelBundle load_model(const std::string& path);

}  // namespace peka
