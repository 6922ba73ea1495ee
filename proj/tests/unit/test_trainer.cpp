#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "../oracles/oracles.hpp"
#include "moemil/data/synthetic.hpp"
#include "moemil/errors.hpp"
#include "moemil/numerics/ops.hpp"
#include "moemil/trainer/adam.hpp"
#include "moemil/trainer/checkpoint.hpp"
#include "moemil/trainer/metrics.hpp"
#include "moemil/trainer/trainer.hpp"

using namespace moemil;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("moemil_test_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig small_model() {
  ModelConfig c;
  c.d_in = 8;
  c.hidden = 8;
  c.classes = 3;
  c.levels = 3;
  c.experts = 3;
  c.topk = 2;
  c.static_layers = 1;
  c.dyn_layers = 2;
  c.d_state = 4;
  c.attn_hidden = 8;
  return c;
}

std::vector<Bag> small_bags(std::size_t per_class, std::uint64_t seed) {
  SyntheticSpec s;
  s.slides_per_class = per_class;
  s.roots = 2;
  s.d_in = 8;
  s.seed = seed;
  return generate_synthetic(s);
}

}  // namespace

// ---- Adam ------------------------------------------------------------------

TEST(Adam, MatchesHandComputedSteps) {
  auto p = Tensord::from({2}, {0.5, -1.0}, true);
  ParamList<double> params{{"p", p}};
  auto st = AdamState<double>::init(params);
  const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {0.5, -1.0};
  for (int t = 1; t <= 3; ++t) {
    p.zero_grad();
    sum(mul(p, p)).backward();  // grad = 2p
    adam_step(params, st, cfg);
    for (int i = 0; i < 2; ++i) {
      const double g = 2 * x[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.data()[i], x[i], 1e-14) << "step " << t;
    }
  }
  EXPECT_EQ(st.steps[0], 3u);
}

TEST(Adam, SkipsParametersWithoutGradient) {
  auto a = Tensord::from({1}, {1.0}, true);
  auto b = Tensord::from({1}, {1.0}, true);
  ParamList<double> params{{"a", a}, {"b", b}};
  auto st = AdamState<double>::init(params);
  sum(a).backward();
  adam_step(params, st, {});
  EXPECT_NE(a.data()[0], 1.0);
  EXPECT_EQ(b.data()[0], 1.0);
  EXPECT_EQ(st.steps[1], 0u);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  auto a = Tensord::from({1}, {1.0}, true);
  ParamList<double> params{{"layer.weight", a}};
  auto st = AdamState<double>::init(params);
  sum(a).backward();
  a.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(params, st, {});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
}

// ---- metrics ---------------------------------------------------------------

TEST(Metrics, AgreeExactlyWithBruteForce) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t C = 2 + rng.below(4), N = 1 + rng.below(30);
    std::vector<std::uint32_t> y(N);
    oracle::Mat p(N, std::vector<double>(C));
    for (std::size_t i = 0; i < N; ++i) {
      y[i] = static_cast<std::uint32_t>(rng.below(C));
      // Coarse scores so ties exercise argmax and midranks.
      for (auto& v : p[i]) v = static_cast<double>(rng.below(5)) / 4.0;
    }
    const auto r = compute_metrics(y, p);
    double f1 = 0, sens = 0, spec = 0, ppv = 0, npv = 0, auc = 0;
    std::size_t correct = 0, auc_n = 0;
    for (std::size_t i = 0; i < N; ++i) correct += oracle::predict(p[i]) == y[i];
    for (std::size_t c = 0; c < C; ++c) {
      const auto b = oracle::binary_counts(y, p, c);
      f1 += oracle::frac(2 * b.tp, 2 * b.tp + b.fp + b.fn);
      sens += oracle::frac(b.tp, b.tp + b.fn);
      spec += oracle::frac(b.tn, b.tn + b.fp);
      ppv += oracle::frac(b.tp, b.tp + b.fp);
      npv += oracle::frac(b.tn, b.tn + b.fn);
      bool defined = false;
      const double a = oracle::pair_auc(y, p, c, &defined);
      EXPECT_EQ(r.auc_skipped[c], !defined);
      if (defined) {
        auc += a;
        ++auc_n;
      }
    }
    const double dc = static_cast<double>(C);
    EXPECT_EQ(r.f1, f1 / dc) << seed;
    EXPECT_EQ(r.sens, sens / dc) << seed;
    EXPECT_EQ(r.spec, spec / dc) << seed;
    EXPECT_EQ(r.ppv, ppv / dc) << seed;
    EXPECT_EQ(r.npv, npv / dc) << seed;
    EXPECT_EQ(r.acc, static_cast<double>(correct) / static_cast<double>(N)) << seed;
    EXPECT_EQ(r.auc, auc_n ? auc / static_cast<double>(auc_n) : 0.0) << seed;
    EXPECT_EQ(r.mcc, oracle::covariance_mcc(y, p, C)) << seed;
  }
}

TEST(Metrics, PerfectPredictionsGiveOnes) {
  const std::vector<std::uint32_t> y{0, 1, 2, 2, 1, 0};
  oracle::Mat p;
  for (auto c : y) {
    std::vector<double> row(3, 0.1);
    row[c] = 0.8;
    p.push_back(row);
  }
  const auto r = compute_metrics(y, p);
  for (double v : {r.f1, r.auc, r.acc, r.mcc, r.sens, r.spec, r.ppv, r.npv}) EXPECT_EQ(v, 1.0);
  EXPECT_FALSE(r.auc_partial());
}

TEST(Metrics, KnownSmallCases) {
  // Binary: scores 0.1 0.4 0.35 0.8 for labels 0 0 1 1 -> AUC 0.75.
  EXPECT_DOUBLE_EQ(binary_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, {false, false, true, true}), 0.75);
  EXPECT_DOUBLE_EQ(binary_auc(std::vector<double>{0.5, 0.5}, {false, true}), 0.5);
  EXPECT_DOUBLE_EQ(multiclass_mcc({{1, 0}, {0, 1}}), 1.0);
  EXPECT_DOUBLE_EQ(multiclass_mcc({{0, 1}, {1, 0}}), -1.0);
  EXPECT_DOUBLE_EQ(multiclass_mcc({{2, 0}, {2, 0}}), 0.0);
  EXPECT_EQ(argmax_row(std::vector<double>{0.3, 0.3, 0.1}), 0u);
}

// ---- checkpoint ------------------------------------------------------------

TEST(Checkpoint, RoundTripAndStructuredErrors) {
  Checkpoint c;
  c.meta = {{"k", 1}};
  c.tensors.push_back({"a", {2, 3}, {1, 2, 3, 4, 5, 6}});
  c.tensors.push_back({"b", {1}, {-0.0f}});
  const auto bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.meta, c.meta);
  EXPECT_EQ(back.tensors, c.tensors);
  EXPECT_EQ(encode_checkpoint(back), bytes);

  auto bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad), VersionError);
  bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  EXPECT_THROW(decode_checkpoint(std::span(bytes.data(), bytes.size() - 3)), FormatError);
  bad = bytes;
  bad.push_back(1);
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  c.tensors.push_back(c.tensors[0]);
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(c)), FormatError);
}

TEST(Checkpoint, ModelSurvivesRoundTrip) {
  const auto m = build_variant<float>(small_model());
  TrainConfig cfg;
  const auto c = decode_checkpoint(encode_checkpoint(make_checkpoint(m, cfg, {}, nullptr)));
  const auto back = model_from_checkpoint(c);
  EXPECT_EQ(back.config, m.config);
  const auto bag = small_bags(1, 3).front();
  EXPECT_EQ(back.forward(bag).probs, m.forward(bag).probs);
  Checkpoint broken = c;
  broken.tensors.pop_back();
  EXPECT_THROW(model_from_checkpoint(broken), FormatError);
}

// ---- training --------------------------------------------------------------

TEST(Trainer, LambdaZeroIsPlainCrossEntropy) {
  const auto m = build_variant<double>(small_model());
  const auto bag = small_bags(1, 4).front();
  const auto out = m.forward(bag);
  const auto parts = total_loss(out, bag.label, 0.0);
  EXPECT_EQ(parts.total.item(), cross_entropy(out.logits, bag.label).item());
  const auto with = total_loss(out, bag.label, 0.5);
  EXPECT_NEAR(with.total.item(), parts.task + 0.5 * with.balance, 1e-12);
}

TEST(Trainer, RunsAreBitIdenticalAndResumeMatches) {
  const auto bags = small_bags(3, 5);
  std::vector<Bag> tr(bags.begin(), bags.begin() + 6), va(bags.begin() + 6, bags.end());
  const auto dir = scratch_dir("repro");
  auto run = [&](const std::string& tag, const TrainOptions& opt, TrainConfig cfg = {}) {
    cfg.epochs = 3;
    cfg.lr = 1e-3;
    cfg.checkpoint_path = (dir / (tag + "_best.mckp")).string();
    cfg.last_checkpoint_path = (dir / (tag + "_last.mckp")).string();
    cfg.metrics_path = (dir / (tag + ".csv")).string();
    return train(small_model(), cfg, tr, va, opt);
  };
  const auto a = run("a", {});
  run("b", {});
  EXPECT_EQ(slurp(dir / "a_last.mckp"), slurp(dir / "b_last.mckp"));
  EXPECT_EQ(slurp(dir / "a_best.mckp"), slurp(dir / "b_best.mckp"));
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(a.history.size(), 3u);

  TrainOptions stop;
  stop.stop_after_epoch = 1;
  const auto part = run("c", stop);
  EXPECT_EQ(part.state.epoch, 1u);
  const auto ck = load_checkpoint(dir / "c_last.mckp");
  TrainOptions resume;
  resume.resume = &ck;
  const auto rest = run("c", resume);
  EXPECT_EQ(rest.history.size(), 2u);
  EXPECT_EQ(slurp(dir / "a_last.mckp"), slurp(dir / "c_last.mckp"));
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "c.csv"));
  fs::remove_all(dir);
}

TEST(Trainer, MetricsCsvHasTrainAndValRows) {
  const auto bags = small_bags(2, 6);
  std::vector<Bag> tr(bags.begin(), bags.begin() + 3), va(bags.begin() + 3, bags.end());
  const auto dir = scratch_dir("csv");
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.checkpoint_path = "";
  cfg.last_checkpoint_path = "";
  cfg.metrics_path = (dir / "m.csv").string();
  train(small_model(), cfg, tr, va);
  std::ifstream is(dir / "m.csv");
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, metrics_csv_header(3));
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 4);
  fs::remove_all(dir);
}

TEST(Trainer, RejectsBadConfig) {
  TrainConfig cfg;
  cfg.lr = -1e-3;
  EXPECT_THROW(cfg.validate(), ContractError);
  nlohmann::json j = to_json(TrainConfig{});
  j["batch_size"] = 4;
  EXPECT_THROW(train_config_from_json(j), ContractError);
  j["batch_size"] = 1;
  EXPECT_NO_THROW(train_config_from_json(j));
  EXPECT_THROW(train(small_model(), TrainConfig{}, {}, small_bags(1, 1)), ContractError);
}

TEST(Trainer, EvaluateSummarizesRouting) {
  const auto m = build_variant<float>(small_model());
  const auto bags = small_bags(2, 7);
  const auto r = evaluate(m, bags);
  ASSERT_EQ(r.routing.load.size(), 2u);
  for (const auto& layer : r.routing.load) {
    double s = 0;
    for (double v : layer) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_GE(r.routing.mean_max_load(), 1.0 / 3.0);
  EXPECT_EQ(r.probs.size(), bags.size());
  EXPECT_THROW(evaluate(m, {}), ContractError);
}
