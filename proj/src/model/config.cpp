#include "moemil/model/config.hpp"

#include <set>

#include "moemil/errors.hpp"

namespace moemil {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full:
      return "full";
    case Variant::wo_r:
      return "wo-r";
    case Variant::wo_moe:
      return "wo-moe";
    case Variant::moeffn:
      return "moeffn";
  }
  throw ContractError("unknown variant");
}

Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "wo-r" || s == "wo_r") return Variant::wo_r;
  if (s == "wo-moe" || s == "wo_moe") return Variant::wo_moe;
  if (s == "moeffn") return Variant::moeffn;
  throw ContractError("unknown model variant '" + s + "' (expected full, wo-r, wo-moe or moeffn)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ContractError(std::string("model config: ") + name + " must be positive");
  };
  positive(d_in, "d_in");
  positive(hidden, "hidden");
  positive(classes, "classes");
  positive(experts, "experts");
  positive(d_state, "d_state");
  positive(d_conv, "d_conv");
  positive(expand, "expand");
  positive(attn_hidden, "attn_hidden");
  positive(ffn_hidden, "ffn_hidden");
  if (levels < 1) throw ContractError("model config: levels must be >= 1");
  if (dyn_layers < 1) throw ContractError("model config: dyn_layers must be >= 1");
  if (topk < 1 || topk > experts) {
    throw ContractError("model config: topk=" + std::to_string(topk) + " must lie in [1, experts=" +
                        std::to_string(experts) + "]");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"d_in", c.d_in},
                        {"hidden", c.hidden},
                        {"classes", c.classes},
                        {"levels", c.levels},
                        {"experts", c.experts},
                        {"topk", c.topk},
                        {"static_layers", c.static_layers},
                        {"dyn_layers", c.dyn_layers},
                        {"d_state", c.d_state},
                        {"d_conv", c.d_conv},
                        {"expand", c.expand},
                        {"attn_hidden", c.attn_hidden},
                        {"ffn_hidden", c.ffn_hidden},
                        {"variant", variant_name(c.variant)},
                        {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("model config must be a JSON object");
  static const std::set<std::string> known = {"d_in",       "hidden",     "classes", "levels",  "experts",
                                              "topk",       "static_layers", "dyn_layers", "d_state", "d_conv",
                                              "expand",     "attn_hidden", "ffn_hidden", "variant", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ContractError("model config: unknown key '" + key + "'");
  }
  ModelConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("d_in", c.d_in);
    get("hidden", c.hidden);
    get("classes", c.classes);
    get("levels", c.levels);
    get("experts", c.experts);
    get("topk", c.topk);
    get("static_layers", c.static_layers);
    get("dyn_layers", c.dyn_layers);
    get("d_state", c.d_state);
    get("d_conv", c.d_conv);
    get("expand", c.expand);
    get("attn_hidden", c.attn_hidden);
    get("ffn_hidden", c.ffn_hidden);
    get("seed", c.seed);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("model config: ") + e.what());
  }
  return c;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t D = c.hidden;
  const std::size_t I = c.expand * D;
  const std::size_t S = c.d_state;
  const std::size_t W = c.d_conv;
  const std::size_t R = static_cast<std::size_t>(c.levels);
  const std::size_t E = c.variant == Variant::wo_moe ? 1 : c.experts;
  const std::size_t norm = 2 * D;
  // in_proj + conv (kernel, bias) + dt (weight, bias) + B/C proj + A + skip + out_proj
  const std::size_t ssm = 3 * D * I + I * I + I * (W + 3 * S + 3);
  const std::size_t expert = c.variant == Variant::moeffn ? norm + 2 * c.ffn_hidden * D : norm + ssm;
  const std::size_t embed = c.d_in * D + D;
  const std::size_t statics = c.variant == Variant::wo_r ? 0 : R * c.static_layers * (norm + ssm);
  const std::size_t block = (norm + ssm) + norm + (E * D + E) + E * expert;
  const std::size_t head = c.attn_hidden * D + c.attn_hidden + c.classes * D + c.classes;
  return embed + statics + c.dyn_layers * block + head;
}

}  // namespace moemil
