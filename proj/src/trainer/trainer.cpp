#include "moemil/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "moemil/errors.hpp"
#include "moemil/numerics/ops.hpp"
#include "moemil/random.hpp"

namespace moemil {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("train: lr must be finite and non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ContractError("train: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ContractError("train: eps must be positive");
  if (epochs < 1) throw ContractError("train: epochs must be at least 1");
  if (!(lambda_balance >= 0.0) || !std::isfinite(lambda_balance)) {
    throw ContractError("train: lambda_balance must be finite and non-negative");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"lr", c.lr},
                        {"beta1", c.beta1},
                        {"beta2", c.beta2},
                        {"eps", c.eps},
                        {"epochs", c.epochs},
                        {"lambda_balance", c.lambda_balance},
                        {"seed", c.seed},
                        {"checkpoint_path", c.checkpoint_path},
                        {"last_checkpoint_path", c.last_checkpoint_path},
                        {"metrics_path", c.metrics_path}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("train config must be a JSON object");
  static const std::set<std::string> known = {"lr",   "beta1",           "beta2",
                                              "eps",  "epochs",          "lambda_balance",
                                              "seed", "checkpoint_path", "last_checkpoint_path",
                                              "metrics_path", "batch_size"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ContractError("train config: unknown key '" + key + "'");
  TrainConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("lr", c.lr);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("eps", c.eps);
    get("epochs", c.epochs);
    get("lambda_balance", c.lambda_balance);
    get("seed", c.seed);
    get("checkpoint_path", c.checkpoint_path);
    get("last_checkpoint_path", c.last_checkpoint_path);
    get("metrics_path", c.metrics_path);
    if (j.contains("batch_size") && j.at("batch_size").get<int>() != 1) {
      throw ContractError("train config: batch_size is fixed at 1");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("train config: ") + e.what());
  }
  return c;
}

template <typename T>
LossParts<T> total_loss(const ForwardOutput<T>& out, std::uint32_t label, double lambda) {
  LossParts<T> parts;
  const Tensor<T> ce = cross_entropy(out.logits, label);
  parts.task = static_cast<double>(ce.item());
  if (out.moe_stats.empty()) {
    parts.total = ce;
    return parts;
  }
  const std::size_t experts = out.moe_stats.front().importance.numel();
  const Tensor<T> lb = load_balance_loss<T>(out.moe_stats, experts);
  parts.balance = static_cast<double>(lb.item());
  parts.total = lambda == 0.0 ? ce : add(ce, scale(lb, static_cast<T>(lambda)));
  return parts;
}

template LossParts<float> total_loss(const ForwardOutput<float>&, std::uint32_t, double);
template LossParts<double> total_loss(const ForwardOutput<double>&, std::uint32_t, double);

namespace {

std::vector<double> layer_mean(const std::vector<std::vector<double>>& v) {
  if (v.empty()) return {};
  std::vector<double> out(v.front().size(), 0.0);
  for (const auto& row : v)
    for (std::size_t e = 0; e < row.size(); ++e) out[e] += row[e];
  for (auto& x : out) x /= static_cast<double>(v.size());
  return out;
}

// Accumulates per-bag routing statistics and predictions.
class Accumulator {
 public:
  void add(const Bag& bag, const ForwardOutput<float>& out, double task, double balance) {
    const std::size_t L = out.moe_stats.size();
    if (importance_.empty() && L > 0) {
      const std::size_t E = out.moe_stats.front().load.size();
      importance_.assign(L, std::vector<double>(E, 0.0));
      load_.assign(L, std::vector<double>(E, 0.0));
    }
    for (std::size_t l = 0; l < L; ++l) {
      const auto imp = out.moe_stats[l].importance.data();
      for (std::size_t e = 0; e < imp.size(); ++e) {
        importance_[l][e] += static_cast<double>(imp[e]);
        load_[l][e] += out.moe_stats[l].load[e];
      }
    }
    r_.slide_ids.push_back(bag.slide_id);
    r_.labels.push_back(bag.label);
    r_.probs.push_back(out.probs);
    task_ += task;
    balance_ += balance;
  }

  EvalResult finish() {
    const auto n = static_cast<double>(r_.labels.size());
    for (auto& row : importance_)
      for (auto& x : row) x /= n;
    for (auto& row : load_)
      for (auto& x : row) x /= n;
    r_.routing.importance = std::move(importance_);
    r_.routing.load = std::move(load_);
    r_.loss_task = task_ / n;
    r_.loss_balance = balance_ / n;
    r_.metrics = compute_metrics(r_.labels, r_.probs);
    return std::move(r_);
  }

 private:
  EvalResult r_;
  std::vector<std::vector<double>> importance_, load_;
  double task_ = 0.0, balance_ = 0.0;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Keeps the header and the rows of epochs <= `epoch`.
void truncate_metrics(const std::string& path, std::size_t epoch, const std::string& header) {
  std::ifstream in(path);
  std::vector<std::string> kept = {header};
  if (in) {
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        continue;
      }
      if (line.empty()) continue;
      const std::size_t e = std::stoul(line.substr(0, line.find(',')));
      if (e <= epoch) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics file " + path);
  for (const auto& l : kept) out << l << '\n';
}

void append_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write metrics file " + path);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

std::vector<double> RoutingSummary::importance_mean() const { return layer_mean(importance); }
std::vector<double> RoutingSummary::load_mean() const { return layer_mean(load); }

double RoutingSummary::mean_max_load() const {
  if (load.empty()) return 0.0;
  double total = 0.0;
  for (const auto& row : load) total += *std::max_element(row.begin(), row.end());
  return total / static_cast<double>(load.size());
}

EvalResult evaluate(const MilModel<float>& model, const std::vector<Bag>& bags) {
  if (bags.empty()) throw ContractError("evaluate: empty split");
  NoGradGuard guard;
  Accumulator acc;
  for (const auto& bag : bags) {
    const ForwardOutput<float> out = model.forward(bag);
    const LossParts<float> loss = total_loss(out, bag.label, 0.0);
    acc.add(bag, out, loss.task, loss.balance);
  }
  return acc.finish();
}

std::string metrics_csv_header(std::size_t experts) {
  std::string h = "epoch,split,loss_task,loss_balance,f1,auc,acc,mcc,sens,spec,ppv,npv";
  for (std::size_t e = 0; e < experts; ++e) h += ",imp_" + std::to_string(e);
  for (std::size_t e = 0; e < experts; ++e) h += ",load_" + std::to_string(e);
  return h;
}

std::string metrics_csv_row(std::size_t epoch, const std::string& split, const EvalResult& r) {
  std::string row = std::to_string(epoch) + "," + split;
  const auto& m = r.metrics;
  for (double v : {r.loss_task, r.loss_balance, m.f1, m.auc, m.acc, m.mcc, m.sens, m.spec, m.ppv, m.npv})
    row += "," + fmt(v);
  for (double v : r.routing.importance_mean()) row += "," + fmt(v);
  for (double v : r.routing.load_mean()) row += "," + fmt(v);
  return row;
}

Checkpoint make_checkpoint(const MilModel<float>& model, const TrainConfig& cfg, const TrainState& state,
                           const AdamState<float>* adam) {
  Checkpoint c;
  const ParamList<float> params = model.parameters();
  c.meta["model"] = to_json(model.config);
  // Output locations are per run and stay out of the checkpoint, so the same
  // config and seed give the same bytes wherever the run writes.
  nlohmann::json train_meta = to_json(cfg);
  for (const char* key : {"checkpoint_path", "last_checkpoint_path", "metrics_path"}) train_meta.erase(key);
  c.meta["train"] = std::move(train_meta);
  c.meta["state"] = {{"epoch", state.epoch},
                     {"rng", state.rng},
                     {"best_f1", state.best_f1},
                     {"best_epoch", state.best_epoch},
                     {"has_optimizer", adam != nullptr}};
  for (const auto& [name, p] : params) {
    c.tensors.push_back({name, p.shape(), std::vector<float>(p.data().begin(), p.data().end())});
  }
  if (adam) {
    c.meta["state"]["adam_steps"] = adam->steps;
    for (std::size_t i = 0; i < params.size(); ++i) c.tensors.push_back({"adam.m." + params[i].first, params[i].second.shape(), adam->m[i]});
    for (std::size_t i = 0; i < params.size(); ++i) c.tensors.push_back({"adam.v." + params[i].first, params[i].second.shape(), adam->v[i]});
  }
  return c;
}

namespace {

const NamedArray& require_tensor(const Checkpoint& c, const std::string& name, const Shape& shape) {
  const NamedArray* t = c.find(name);
  if (!t) throw FormatError("checkpoint lacks tensor '" + name + "'");
  if (t->shape != shape) {
    throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(t->shape) + ", model expects " +
                      shape_str(shape));
  }
  return *t;
}

const nlohmann::json& require_meta(const Checkpoint& c, const char* key) {
  if (!c.meta.is_object() || !c.meta.contains(key)) throw FormatError(std::string("checkpoint lacks '") + key + "'");
  return c.meta.at(key);
}

TrainState state_from_checkpoint(const Checkpoint& c) {
  const auto& s = require_meta(c, "state");
  TrainState st;
  try {
    st.epoch = s.at("epoch").get<std::size_t>();
    st.rng = s.at("rng").get<std::string>();
    st.best_f1 = s.at("best_f1").get<double>();
    st.best_epoch = s.at("best_epoch").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint state: ") + e.what());
  }
  return st;
}

}  // namespace

MilModel<float> model_from_checkpoint(const Checkpoint& c) {
  MilModel<float> model = build_variant<float>(model_config_from_json(require_meta(c, "model")));
  for (auto& [name, p] : model.parameters()) {
    const NamedArray& t = require_tensor(c, name, p.shape());
    Tensor<float> handle = p;
    std::copy(t.data.begin(), t.data.end(), handle.mutable_data().begin());
  }
  return model;
}

TrainConfig train_config_from_checkpoint(const Checkpoint& c) { return train_config_from_json(require_meta(c, "train")); }

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<Bag>& train_bags,
                  const std::vector<Bag>& val_bags, const TrainOptions& options) {
  cfg.validate();
  if (train_bags.empty()) throw ContractError("train: the train split is empty");
  if (val_bags.empty()) throw ContractError("train: the val split is empty (needed for model selection)");

  TrainResult res;
  Rng rng(cfg.seed);
  if (options.resume) {
    const Checkpoint& ck = *options.resume;
    res.model = model_from_checkpoint(ck);
    res.state = state_from_checkpoint(ck);
    const ParamList<float> params = res.model.parameters();
    res.adam = AdamState<float>::init(params);
    const auto& s = require_meta(ck, "state");
    if (!s.value("has_optimizer", false)) throw FormatError("checkpoint has no optimizer state; cannot resume");
    try {
      res.adam.steps = s.at("adam_steps").get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("checkpoint state: ") + e.what());
    }
    if (res.adam.steps.size() != params.size()) throw FormatError("checkpoint optimizer state does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      res.adam.m[i] = require_tensor(ck, "adam.m." + params[i].first, params[i].second.shape()).data;
      res.adam.v[i] = require_tensor(ck, "adam.v." + params[i].first, params[i].second.shape()).data;
    }
    rng.set_state(res.state.rng);
  } else {
    res.model = build_variant<float>(model_cfg);
    res.adam = AdamState<float>::init(res.model.parameters());
  }
  const ParamList<float> params = res.model.parameters();
  const std::size_t experts = res.model.config.experts;
  const std::string header = metrics_csv_header(experts);
  if (!cfg.metrics_path.empty()) truncate_metrics(cfg.metrics_path, res.state.epoch, header);

  const AdamConfig adam_cfg = cfg.adam();
  std::vector<std::size_t> order(train_bags.size());
  for (std::size_t epoch = res.state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    Accumulator acc;
    for (std::size_t idx : order) {
      const Bag& bag = train_bags[idx];
      const ForwardOutput<float> out = res.model.forward(bag);
      LossParts<float> loss = total_loss(out, bag.label, cfg.lambda_balance);
      const double total = static_cast<double>(loss.total.item());
      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " on slide '" + bag.slide_id + "'");
      }
      acc.add(bag, out, loss.task, loss.balance);
      loss.total.backward();
      adam_step(params, res.adam, adam_cfg);
      for (const auto& [name, p] : params) {
        Tensor<float> handle = p;
        handle.zero_grad();
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = acc.finish();
    rec.val = evaluate(res.model, val_bags);
    res.state.epoch = epoch;
    res.state.rng = rng.state();
    if (rec.val.metrics.f1 > res.state.best_f1) {
      res.state.best_f1 = rec.val.metrics.f1;
      res.state.best_epoch = epoch;
      if (!cfg.checkpoint_path.empty()) {
        save_checkpoint(make_checkpoint(res.model, cfg, res.state, nullptr), cfg.checkpoint_path);
      }
    }
    if (!cfg.last_checkpoint_path.empty()) {
      save_checkpoint(make_checkpoint(res.model, cfg, res.state, &res.adam), cfg.last_checkpoint_path);
    }
    if (!cfg.metrics_path.empty()) {
      append_lines(cfg.metrics_path, {metrics_csv_row(epoch, "train", rec.train), metrics_csv_row(epoch, "val", rec.val)});
    }
    if (options.on_epoch) options.on_epoch(rec);
    res.history.push_back(std::move(rec));
    if (options.stop_after_epoch && epoch >= *options.stop_after_epoch) break;
  }
  return res;
}

}  // namespace moemil
