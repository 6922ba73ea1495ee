#pragma once

// The document behind every CLI command:
//   {"seed": u64?, "model": {...}, "train": {...}, "synthetic": {...},
//    "split": {"ratios": [train, val, test], "seed": u64},
//    "paths": {"data_dir", "manifest", "out_dir"},
//    "ablate": {"variants": [...], "seeds": [...],
//               "sweep": {"axis": "topk"|"dyn_layers"|"lambda_balance", "values": [...]}}}
// Unknown keys are rejected at every level. A top-level "seed" overrides the
// model, train, synthetic and split seeds.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "moemil/data/synthetic.hpp"
#include "moemil/model/config.hpp"
#include "moemil/trainer/trainer.hpp"

namespace moemil {

struct SplitConfig {
  std::array<double, 3> ratios = {0.7, 0.1, 0.2};
  std::uint64_t seed = 0;
};

struct PathsConfig {
  std::string data_dir = "data";
  std::string manifest;  // empty: <data_dir>/manifest.csv
  std::string out_dir = "run";

  std::filesystem::path manifest_path() const;
};

struct SweepConfig {
  std::string axis;  // empty: no sweep
  std::vector<double> values;
};

struct AblateConfig {
  std::vector<std::string> variants = {"full", "wo-r", "wo-moe", "moeffn"};
  std::vector<std::uint64_t> seeds = {0};
  SweepConfig sweep;
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  ModelConfig model;
  TrainConfig train;
  SyntheticSpec synthetic;
  SplitConfig split;
  PathsConfig paths;
  AblateConfig ablate;
  // Model keys given explicitly; the rest may be filled from the dataset
  // (d_in, classes, levels).
  std::set<std::string> model_keys_set;

  // Pushes `seed` into the per-section seeds.
  void apply_seed(std::uint64_t s);
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
// IoError if unreadable, ContractError if not valid JSON or unknown keys.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace moemil
