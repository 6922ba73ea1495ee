#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"

namespace moemil {

enum class Variant {
  full,    // static experts + region-nested MoE-Mamba blocks
  wo_r,    // no resolution-ordered static encoding stage
  wo_moe,  // a single dynamic expert (E = 1, k = 1)
  moeffn,  // feed-forward dynamic experts with the same routing
};

std::string variant_name(Variant v);   // "full", "wo-r", "wo-moe", "moeffn"
Variant parse_variant(const std::string& s);  // ContractError on unknown tags

struct ModelConfig {
  std::size_t d_in = 1024;
  std::size_t hidden = 512;
  std::size_t classes = 2;
  int levels = 3;
  std::size_t experts = 4;
  std::size_t topk = 2;
  std::size_t static_layers = 2;
  std::size_t dyn_layers = 6;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t expand = 2;
  std::size_t attn_hidden = 256;
  std::size_t ffn_hidden = 1024;
  Variant variant = Variant::full;
  std::uint64_t seed = 0;

  // ContractError unless 1 <= topk <= experts, dyn_layers >= 1 and all
  // widths are positive.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Strict (de)serialization: unknown keys are rejected, missing keys keep
// their defaults.
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Trainable scalar count of a model built from `c` (after variant
// adjustments, e.g. WO_MoE forces one expert).
std::size_t parameter_count(const ModelConfig& c);

}  // namespace moemil
