#pragma once

// Training loop: Adam, batch size 1, objective L = L_task + lambda * L_balance,
// per-epoch train/val metrics, best-val-F1 and last-epoch checkpoints, and
// bit-exact resume.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "moemil/data/bag.hpp"
#include "moemil/model/model.hpp"
#include "moemil/trainer/adam.hpp"
#include "moemil/trainer/checkpoint.hpp"
#include "moemil/trainer/metrics.hpp"

namespace moemil {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 15;
  double lambda_balance = 0.001;
  std::uint64_t seed = 0;  // shuffling stream
  // Output files; an empty path disables that output.
  std::string checkpoint_path = "model_best.mckp";
  std::string last_checkpoint_path = "model_last.mckp";
  std::string metrics_path = "metrics.csv";

  void validate() const;  // ContractError unless lr > 0, epochs >= 1, ...
  AdamConfig adam() const { return {lr, beta1, beta2, eps}; }

  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

template <typename T>
struct LossParts {
  Tensor<T> total;
  double task = 0.0;
  double balance = 0.0;
};

// cross_entropy(logits, label) + lambda * load_balance_loss(stats). With
// lambda == 0 the total is the cross-entropy tensor itself.
template <typename T>
LossParts<T> total_loss(const ForwardOutput<T>& out, std::uint32_t label, double lambda);

// Expert importance/load per dynamic layer, averaged over bags.
struct RoutingSummary {
  std::vector<std::vector<double>> importance;  // [L][E]
  std::vector<std::vector<double>> load;        // [L][E]

  std::vector<double> importance_mean() const;  // layer-averaged, [E]
  std::vector<double> load_mean() const;
  // Mean over layers of max_e load[l][e].
  double mean_max_load() const;
};

struct EvalResult {
  MetricsReport metrics;
  double loss_task = 0.0;     // mean over bags
  double loss_balance = 0.0;  // mean over bags
  RoutingSummary routing;
  std::vector<std::string> slide_ids;
  std::vector<std::uint32_t> labels;
  std::vector<std::vector<double>> probs;
};

// Forward passes without gradient tracking, bags in the given order.
EvalResult evaluate(const MilModel<float>& model, const std::vector<Bag>& bags);

struct EpochRecord {
  std::size_t epoch = 0;
  EvalResult train;  // from the training-time forward passes (before each step)
  EvalResult val;
};

struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::string rng;
  double best_f1 = -1.0;
  std::size_t best_epoch = 0;
};

struct TrainOptions {
  const Checkpoint* resume = nullptr;           // a last-epoch checkpoint
  std::optional<std::size_t> stop_after_epoch;  // simulate an interruption
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  MilModel<float> model;
  AdamState<float> adam;
  TrainState state;
  std::vector<EpochRecord> history;  // epochs run by this call
};

// ContractError if either split is empty; NumericError if a loss or
// gradient turns non-finite.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<Bag>& train_bags,
                  const std::vector<Bag>& val_bags, const TrainOptions& options = {});

// Checkpoint = {"model", "train", "state"} JSON + parameters (+ Adam moments
// as "adam.m.<name>" / "adam.v.<name>" when `adam` is given).
Checkpoint make_checkpoint(const MilModel<float>& model, const TrainConfig& cfg, const TrainState& state,
                           const AdamState<float>* adam);
// FormatError if a parameter is missing or has the wrong shape.
MilModel<float> model_from_checkpoint(const Checkpoint& c);
TrainConfig train_config_from_checkpoint(const Checkpoint& c);

// Metrics CSV row helpers (shared with the CLI).
std::string metrics_csv_header(std::size_t experts);
std::string metrics_csv_row(std::size_t epoch, const std::string& split, const EvalResult& r);

}  // namespace moemil
