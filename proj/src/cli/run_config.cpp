#include "moemil/cli/run_config.hpp"

#include <fstream>

#include "moemil/errors.hpp"

namespace moemil {

std::filesystem::path PathsConfig::manifest_path() const {
  if (!manifest.empty()) return manifest;
  return std::filesystem::path(data_dir) / "manifest.csv";
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  model.seed = s;
  train.seed = s;
  synthetic.seed = s;
  split.seed = s;
}

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ContractError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ContractError(where + ": unknown key '" + key + "'");
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"seed", "model", "train", "synthetic", "split", "paths", "ablate"}, "run config");
  RunConfig c;
  try {
    if (j.contains("model")) {
      c.model = model_config_from_json(j.at("model"));
      for (const auto& [key, value] : j.at("model").items()) c.model_keys_set.insert(key);
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("synthetic")) c.synthetic = synthetic_spec_from_json(j.at("synthetic"));
    if (j.contains("split")) {
      const auto& s = j.at("split");
      reject_unknown(s, {"ratios", "seed"}, "split");
      if (s.contains("ratios")) c.split.ratios = s.at("ratios").get<std::array<double, 3>>();
      if (s.contains("seed")) c.split.seed = s.at("seed").get<std::uint64_t>();
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      reject_unknown(p, {"data_dir", "manifest", "out_dir"}, "paths");
      if (p.contains("data_dir")) c.paths.data_dir = p.at("data_dir").get<std::string>();
      if (p.contains("manifest")) c.paths.manifest = p.at("manifest").get<std::string>();
      if (p.contains("out_dir")) c.paths.out_dir = p.at("out_dir").get<std::string>();
    }
    if (j.contains("ablate")) {
      const auto& a = j.at("ablate");
      reject_unknown(a, {"variants", "seeds", "sweep"}, "ablate");
      if (a.contains("variants")) c.ablate.variants = a.at("variants").get<std::vector<std::string>>();
      if (a.contains("seeds")) c.ablate.seeds = a.at("seeds").get<std::vector<std::uint64_t>>();
      if (a.contains("sweep")) {
        const auto& s = a.at("sweep");
        reject_unknown(s, {"axis", "values"}, "ablate.sweep");
        if (s.contains("axis")) c.ablate.sweep.axis = s.at("axis").get<std::string>();
        if (s.contains("values")) c.ablate.sweep.values = s.at("values").get<std::vector<double>>();
      }
    }
    if (j.contains("seed")) c.apply_seed(j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("run config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  if (c.seed) j["seed"] = *c.seed;
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["synthetic"] = to_json(c.synthetic);
  j["split"] = {{"ratios", c.split.ratios}, {"seed", c.split.seed}};
  j["paths"] = {{"data_dir", c.paths.data_dir}, {"manifest", c.paths.manifest}, {"out_dir", c.paths.out_dir}};
  j["ablate"] = {{"variants", c.ablate.variants},
                 {"seeds", c.ablate.seeds},
                 {"sweep", {{"axis", c.ablate.sweep.axis}, {"values", c.ablate.sweep.values}}}};
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace moemil
