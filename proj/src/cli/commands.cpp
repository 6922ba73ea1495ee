#include "moemil/cli/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "moemil/cli/heatmap.hpp"
#include "moemil/cli/run_config.hpp"
#include "moemil/data/manifest.hpp"
#include "moemil/data/synthetic.hpp"
#include "moemil/errors.hpp"
#include "moemil/numerics/kernels.hpp"
#include "moemil/trainer/trainer.hpp"

namespace fs = std::filesystem;

namespace moemil {

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitContract;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitContract;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 1;
  }
}

nlohmann::json forward_record(const Bag& bag, const ForwardOutput<float>& out) {
  std::size_t pred = 0;
  for (std::size_t c = 1; c < out.probs.size(); ++c)
    if (out.probs[c] > out.probs[pred]) pred = c;
  nlohmann::json j;
  j["slide_id"] = bag.slide_id;
  j["label"] = bag.label;
  j["pred"] = pred;
  j["probs"] = out.probs;
  j["attention"] = out.attention;
  j["token_level"] = out.token_level;
  nlohmann::json load = nlohmann::json::array();
  for (const auto& s : out.moe_stats) load.push_back(s.load);
  j["load"] = load;
  return j;
}

void write_scan_sections(std::ostream& os, const Bag& bag) {
  const PatchHierarchy h = bag.hierarchy();
  os << "# region-nested\n";
  write_scan_text(os, h, region_nested_scan(h));
  os << "# resolution-ordered\n";
  write_scan_text(os, h, resolution_ordered_scan(h));
}

std::string validate_scan_sections(const std::string& text) {
  std::istringstream is(text);
  std::string line, section;
  std::ostringstream nested, all;
  bool has_headers = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] == '#') {
      has_headers = true;
      section = line.substr(line.find_first_not_of("# "));
      continue;
    }
    all << line << '\n';
    if (section == "region-nested") nested << line << '\n';
  }
  std::istringstream body(has_headers ? nested.str() : all.str());
  const auto rows = read_scan_text(body);
  if (rows.empty()) return "no region-nested rows found";
  return validate_region_nested_text(rows);
}

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) cfg.apply_seed(*g.seed);
  return cfg;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  f << s;
  if (!f) throw IoError("failed writing " + p.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

bool non_empty_dir(const fs::path& dir) {
  std::error_code ec;
  return fs::is_directory(dir, ec) && !fs::is_empty(dir, ec);
}

std::string fixed(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

struct Dataset {
  Manifest manifest;
  std::vector<Bag> train, val, test;

  std::vector<Bag>& split(Split s) { return s == Split::train ? train : s == Split::val ? val : test; }
};

Dataset load_dataset(const fs::path& manifest_path) {
  Dataset d;
  d.manifest = read_manifest(manifest_path);
  for (const auto& e : d.manifest.entries) d.split(e.split).push_back(load_entry(d.manifest, e));
  return d;
}

// Fills d_in, classes and levels from the data unless the config set them.
ModelConfig resolve_model(const RunConfig& cfg, const Dataset& d) {
  ModelConfig m = cfg.model;
  std::size_t d_in = 0, classes = 0;
  int levels = 0;
  for (const auto* split : {&d.train, &d.val, &d.test}) {
    for (const auto& b : *split) {
      if (d_in == 0) d_in = b.d_in();
      classes = std::max<std::size_t>(classes, b.label + 1);
      levels = std::max(levels, b.levels);
    }
  }
  if (!cfg.model_keys_set.count("d_in") && d_in > 0) m.d_in = d_in;
  if (!cfg.model_keys_set.count("classes") && classes > 0) m.classes = std::max<std::size_t>(classes, 2);
  if (!cfg.model_keys_set.count("levels") && levels > 0) m.levels = levels;
  return m;
}

void print_metrics(std::ostream& out, const std::string& title, const MetricsReport& m) {
  out << title << " (" << m.samples << " slides)\n";
  const std::pair<const char*, double> rows[] = {{"f1", m.f1},     {"auc", m.auc},   {"acc", m.acc},
                                                 {"mcc", m.mcc},   {"sens", m.sens}, {"spec", m.spec},
                                                 {"ppv", m.ppv},   {"npv", m.npv}};
  for (const auto& [name, v] : rows) out << "  " << std::left << std::setw(6) << name << fixed(v) << '\n';
  if (m.auc_partial()) out << "  (auc averaged over the classes with both positives and negatives)\n";
  out << "  confusion [true x pred]\n";
  for (const auto& row : m.confusion) {
    out << "   ";
    for (auto v : row) out << ' ' << std::setw(4) << v;
    out << '\n';
  }
}

// ---- generate ------------------------------------------------------------

int cmd_generate(const Globals& g, const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = g.out.empty() ? fs::path(cfg.paths.data_dir) : fs::path(g.out);
  if (non_empty_dir(dir)) {
    if (!g.force) throw ContractError("refusing to write into non-empty directory " + dir.string() + " (use --force)");
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto ext = entry.path().extension();
      if (ext == ".mbag" || entry.path().filename() == "manifest.csv" || entry.path().filename() == "dataset.json") {
        fs::remove(entry.path());
      }
    }
  }
  ensure_dir(dir);
  const std::vector<Bag> bags = generate_synthetic(cfg.synthetic);
  std::vector<SplitInput> inputs;
  for (const auto& b : bags) {
    write_bag(b, dir / (b.slide_id + ".mbag"));
    inputs.push_back({b.slide_id, b.label, b.slide_id + ".mbag"});
  }
  Manifest m = split_manifest(inputs, cfg.split.ratios, cfg.split.seed);
  write_manifest(m, dir / "manifest.csv");
  nlohmann::json info = {{"synthetic", to_json(cfg.synthetic)},
                         {"split", {{"ratios", cfg.split.ratios}, {"seed", cfg.split.seed}}}};
  write_text(dir / "dataset.json", info.dump(2) + "\n");

  std::map<std::uint32_t, std::array<std::size_t, 3>> counts;
  for (const auto& e : m.entries) ++counts[e.label][static_cast<std::size_t>(e.split)];
  out << "wrote " << bags.size() << " bags to " << dir.string() << '\n';
  for (const auto& [label, c] : counts) {
    out << "class " << label << ": " << c[0] + c[1] + c[2] << " bags (train " << c[0] << ", val " << c[1] << ", test "
        << c[2] << ")\n";
  }
  return kExitOk;
}

// ---- train ---------------------------------------------------------------

struct TrainOutcome {
  TrainResult result;
  ModelConfig model;
  TrainConfig train;
};

TrainOutcome run_training(const RunConfig& cfg, const Dataset& data, const fs::path& out_dir, bool resume,
                          bool force, std::ostream& out) {
  ensure_dir(out_dir);
  TrainConfig tc = cfg.train;
  tc.checkpoint_path = (out_dir / (tc.checkpoint_path.empty() ? "model_best.mckp" : tc.checkpoint_path)).string();
  tc.last_checkpoint_path =
      (out_dir / (tc.last_checkpoint_path.empty() ? "model_last.mckp" : tc.last_checkpoint_path)).string();
  tc.metrics_path = (out_dir / (tc.metrics_path.empty() ? "metrics.csv" : tc.metrics_path)).string();
  const ModelConfig mc = resolve_model(cfg, data);

  std::optional<Checkpoint> ck;
  TrainOptions opts;
  if (resume) {
    ck = load_checkpoint(tc.last_checkpoint_path);
    opts.resume = &*ck;
  } else if (fs::exists(tc.last_checkpoint_path) && !force) {
    throw ContractError("output directory " + out_dir.string() + " already holds a run (use --force or --resume)");
  }
  opts.on_epoch = [&](const EpochRecord& r) {
    out << "epoch " << std::setw(3) << r.epoch << "  train loss " << fixed(r.train.loss_task) << "  balance "
        << fixed(r.train.loss_balance) << "  val f1 " << fixed(r.val.metrics.f1) << "  val acc "
        << fixed(r.val.metrics.acc) << '\n'
        << std::flush;
  };
  TrainOutcome o{train(mc, tc, data.train, data.val, opts), mc, tc};
  return o;
}

void write_run_log(const fs::path& dir, const std::string& command, const RunConfig& cfg, const ModelConfig* model,
                   const nlohmann::json& result) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = to_json(cfg);
  if (model) j["config"]["model"] = to_json(*model);
  j["result"] = result;
  write_text(dir / "run_log.json", j.dump(2) + "\n");
}

int cmd_train(const Globals& g, const RunConfig& cfg, bool resume, std::ostream& out) {
  const fs::path out_dir = g.out.empty() ? fs::path(cfg.paths.out_dir) : fs::path(g.out);
  const Dataset data = load_dataset(cfg.paths.manifest_path());
  const TrainOutcome o = run_training(cfg, data, out_dir, resume, g.force, out);
  out << "best val f1 " << fixed(o.result.state.best_f1) << " at epoch " << o.result.state.best_epoch << '\n';
  RunConfig echoed = cfg;
  echoed.train = o.train;
  write_run_log(out_dir, "train", echoed, &o.model,
                {{"best_f1", o.result.state.best_f1},
                 {"best_epoch", o.result.state.best_epoch},
                 {"epochs_completed", o.result.state.epoch},
                 {"parameters", parameter_count(o.model)}});
  return kExitOk;
}

// ---- eval ----------------------------------------------------------------

int cmd_eval(const Globals& g, const RunConfig& cfg, const std::string& checkpoint, const std::string& split_name_arg,
             std::ostream& out) {
  const Split split = parse_split(split_name_arg);
  const Checkpoint ck = load_checkpoint(checkpoint);
  const MilModel<float> model = model_from_checkpoint(ck);
  Dataset data = load_dataset(cfg.paths.manifest_path());
  const std::vector<Bag>& bags = data.split(split);
  if (bags.empty()) throw ContractError("split '" + split_name_arg + "' is empty");
  const EvalResult r = evaluate(model, bags);
  print_metrics(out, "eval " + split_name_arg, r.metrics);
  if (!g.out.empty()) {
    const fs::path dir(g.out);
    ensure_dir(dir);
    write_text(dir / ("eval_" + split_name_arg + ".csv"),
               metrics_csv_header(model.config.experts) + "\n" + metrics_csv_row(0, split_name_arg, r) + "\n");
    std::string lines;
    {
      NoGradGuard guard;
      for (const auto& b : bags) lines += forward_record(b, model.forward(b)).dump() + "\n";
    }
    write_text(dir / ("predictions_" + split_name_arg + ".jsonl"), lines);
  }
  return kExitOk;
}

// ---- ablate --------------------------------------------------------------

struct AblationRow {
  std::string variant;
  std::string setting;
  std::string seed;
  MetricsReport m;
};

void apply_sweep(ModelConfig& m, TrainConfig& t, const std::string& axis, double v) {
  if (axis == "topk") {
    m.topk = static_cast<std::size_t>(v);
  } else if (axis == "dyn_layers") {
    m.dyn_layers = static_cast<std::size_t>(v);
  } else if (axis == "lambda_balance") {
    t.lambda_balance = v;
  } else {
    throw ContractError("unknown sweep axis '" + axis + "' (expected topk, dyn_layers or lambda_balance)");
  }
}

std::string setting_label(const std::string& axis, double v) {
  if (axis.empty()) return "-";
  std::ostringstream os;
  os << axis << "=" << v;
  return os.str();
}

int cmd_ablate(const Globals& g, const RunConfig& cfg, std::ostream& out) {
  const fs::path out_dir = g.out.empty() ? fs::path(cfg.paths.out_dir) : fs::path(g.out);
  std::set<std::string> seen;
  std::vector<Variant> variants;
  for (const auto& v : cfg.ablate.variants) {
    const Variant parsed = parse_variant(v);
    if (!seen.insert(variant_name(parsed)).second) throw ContractError("duplicate variant '" + v + "' in ablation list");
    variants.push_back(parsed);
  }
  if (variants.empty()) throw ContractError("ablation needs at least one variant");
  if (cfg.ablate.seeds.empty()) throw ContractError("ablation needs at least one seed");
  if (!cfg.ablate.sweep.axis.empty() && cfg.ablate.sweep.values.empty()) {
    throw ContractError("sweep axis '" + cfg.ablate.sweep.axis + "' has no values");
  }
  const std::vector<double> settings = cfg.ablate.sweep.axis.empty() ? std::vector<double>{0.0} : cfg.ablate.sweep.values;
  const Dataset data = load_dataset(cfg.paths.manifest_path());
  if (data.test.empty()) throw ContractError("ablation needs a non-empty test split");
  ensure_dir(out_dir);

  std::vector<AblationRow> rows, means;
  for (Variant v : variants) {
    for (double s : settings) {
      std::vector<MetricsReport> per_seed;
      for (std::uint64_t seed : cfg.ablate.seeds) {
        RunConfig run = cfg;
        run.model.variant = v;
        run.model.seed = seed;
        run.train.seed = seed;
        if (!cfg.ablate.sweep.axis.empty()) apply_sweep(run.model, run.train, cfg.ablate.sweep.axis, s);
        std::string name = variant_name(v);
        if (!cfg.ablate.sweep.axis.empty()) name += "_" + setting_label(cfg.ablate.sweep.axis, s);
        const fs::path dir = out_dir / name / ("seed_" + std::to_string(seed));
        out << "== " << name << " seed " << seed << '\n';
        const TrainOutcome o = run_training(run, data, dir, false, true, out);
        const MilModel<float> best = model_from_checkpoint(load_checkpoint(o.train.checkpoint_path));
        const EvalResult r = evaluate(best, data.test);
        rows.push_back({variant_name(v), setting_label(cfg.ablate.sweep.axis, s), std::to_string(seed), r.metrics});
        per_seed.push_back(r.metrics);
      }
      MetricsReport mean;
      for (const auto& m : per_seed) {
        mean.f1 += m.f1 / static_cast<double>(per_seed.size());
        mean.auc += m.auc / static_cast<double>(per_seed.size());
        mean.acc += m.acc / static_cast<double>(per_seed.size());
        mean.mcc += m.mcc / static_cast<double>(per_seed.size());
      }
      means.push_back({variant_name(v), setting_label(cfg.ablate.sweep.axis, s), "mean", mean});
    }
  }

  std::string csv = "variant,setting,seed,f1,auc,acc,mcc\n";
  auto csv_row = [](const AblationRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.17g,%.17g,%.17g,%.17g\n", r.variant.c_str(), r.setting.c_str(),
                  r.seed.c_str(), r.m.f1, r.m.auc, r.m.acc, r.m.mcc);
    return std::string(buf);
  };
  for (const auto& r : rows) csv += csv_row(r);
  for (const auto& r : means) csv += csv_row(r);
  write_text(out_dir / "ablation.csv", csv);

  out << std::left << std::setw(10) << "variant" << std::setw(22) << "setting" << std::setw(8) << "seed"
      << std::setw(8) << "F1" << std::setw(8) << "AUC" << std::setw(8) << "ACC" << "MCC\n";
  for (const auto* list : {&rows, &means}) {
    for (const auto& r : *list) {
      out << std::left << std::setw(10) << r.variant << std::setw(22) << r.setting << std::setw(8) << r.seed
          << std::setw(8) << fixed(r.m.f1) << std::setw(8) << fixed(r.m.auc) << std::setw(8) << fixed(r.m.acc)
          << fixed(r.m.mcc) << '\n';
    }
  }
  nlohmann::json result = nlohmann::json::array();
  for (const auto& r : means) {
    result.push_back({{"variant", r.variant}, {"setting", r.setting}, {"f1", r.m.f1}, {"auc", r.m.auc},
                      {"acc", r.m.acc}, {"mcc", r.m.mcc}});
  }
  write_run_log(out_dir, "ablate", cfg, nullptr, result);
  return kExitOk;
}

// ---- heatmap / scan ------------------------------------------------------

int cmd_heatmap(const Globals& g, const RunConfig& cfg, const std::string& checkpoint, const std::string& bag_path,
                std::ostream& out) {
  const MilModel<float> model = model_from_checkpoint(load_checkpoint(checkpoint));
  const Bag bag = read_bag(bag_path);
  const fs::path dir = g.out.empty() ? fs::path(cfg.paths.out_dir) / "heatmap" : fs::path(g.out);
  ForwardOutput<float> fo;
  {
    NoGradGuard guard;
    fo = model.forward(bag);
  }
  write_heatmap_files(bag, fo.attention, dir);
  out << "wrote heatmap for " << bag.slide_id << " (" << bag.size() << " tokens) to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_scan(const std::string& bag_path, const std::string& validate, std::ostream& out) {
  if (!validate.empty()) {
    std::string text;
    if (validate == "-") {
      std::ostringstream ss;
      ss << std::cin.rdbuf();
      text = ss.str();
    } else {
      std::ifstream f(validate);
      if (!f) throw IoError("cannot read " + validate);
      std::ostringstream ss;
      ss << f.rdbuf();
      text = ss.str();
    }
    const std::string problem = validate_scan_sections(text);
    if (!problem.empty()) throw FormatError("region-nested order invalid: " + problem);
    out << "ok: region-nested order is contiguous\n";
    return kExitOk;
  }
  if (bag_path.empty()) throw ContractError("scan needs --bag or --validate");
  write_scan_sections(out, read_bag(bag_path));
  return kExitOk;
}

void apply_threads_env(std::ostream& err) {
  const char* v = std::getenv("MOEMIL_THREADS");
  if (!v || !*v) return;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) {
    err << "warning: ignoring MOEMIL_THREADS='" << v << "'\n";
    return;
  }
  kernels::set_max_threads(static_cast<int>(n));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-resolution MoE state-space MIL classifier"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run config (JSON)");
  app.add_option("--seed", g.seed, "Seed for model, shuffling, data and splits");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--force", g.force, "Overwrite existing outputs");

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset (MBAG files + manifest.csv)");
  std::optional<std::size_t> classes, per_class, roots, d_in;
  std::optional<double> signal, noise, fraction, decoy;
  gen->add_option("--classes", classes);
  gen->add_option("--slides-per-class", per_class);
  gen->add_option("--roots", roots);
  gen->add_option("--d-in", d_in);
  gen->add_option("--signal", signal);
  gen->add_option("--noise", noise);
  gen->add_option("--signal-fraction", fraction);
  gen->add_option("--decoy-rate", decoy);

  std::optional<std::string> variant, data_dir, manifest;
  std::optional<std::size_t> epochs, hidden, experts, topk, dyn_layers, static_layers;
  std::optional<double> lr, lambda;
  auto add_train_flags = [&](CLI::App* sub) {
    sub->add_option("--variant", variant, "full | wo-r | wo-moe | moeffn");
    sub->add_option("--epochs", epochs);
    sub->add_option("--lr", lr);
    sub->add_option("--lambda", lambda, "Balance loss weight (default 0.001)");
    sub->add_option("--hidden", hidden);
    sub->add_option("--experts", experts);
    sub->add_option("--topk", topk);
    sub->add_option("--dyn-layers", dyn_layers);
    sub->add_option("--static-layers", static_layers);
  };
  auto add_data_flags = [&](CLI::App* sub) {
    sub->add_option("--data-dir", data_dir);
    sub->add_option("--manifest", manifest);
  };

  auto* tr = app.add_subcommand("train", "Train a model on a manifest");
  add_train_flags(tr);
  add_data_flags(tr);
  bool resume = false;
  tr->add_flag("--resume", resume, "Continue from <out>/model_last.mckp");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  std::string checkpoint, split = "test";
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--split", split, "train | val | test");
  add_data_flags(ev);

  auto* ab = app.add_subcommand("ablate", "Train variants/settings over seeds and compare");
  add_train_flags(ab);
  add_data_flags(ab);
  std::optional<std::string> variants_arg, seeds_arg, sweep_arg;
  ab->add_option("--variants", variants_arg, "Comma list, e.g. full,wo-r,wo-moe,moeffn");
  ab->add_option("--seeds", seeds_arg, "Comma list of seeds");
  ab->add_option("--sweep", sweep_arg, "axis=v1,v2,... with axis topk | dyn_layers | lambda_balance");

  auto* hm = app.add_subcommand("heatmap", "Export per-level attention maps for one bag");
  std::string bag_path;
  hm->add_option("--checkpoint", checkpoint)->required();
  hm->add_option("--bag", bag_path)->required();

  auto* sc = app.add_subcommand("scan", "Print both scan orders of a bag, or validate a dump");
  std::string validate;
  sc->add_option("--bag", bag_path);
  sc->add_option("--validate", validate, "Scan dump to check ('-' for stdin)");

  for (auto* sub : {gen, tr, ev, ab, hm, sc}) sub->fallthrough();

  std::vector<std::string> argv_store = {"moemil"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      const auto subs = app.get_subcommands();
      out << (subs.empty() ? app.help() : subs.front()->help());
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitContract;
  }

  try {
    apply_threads_env(err);
    RunConfig cfg = resolve_config(g);
    if (data_dir) cfg.paths.data_dir = *data_dir;
    if (manifest) cfg.paths.manifest = *manifest;
    if (variant) cfg.model.variant = parse_variant(*variant);
    if (epochs) cfg.train.epochs = *epochs;
    if (lr) cfg.train.lr = *lr;
    if (lambda) cfg.train.lambda_balance = *lambda;
    if (hidden) cfg.model.hidden = *hidden;
    if (experts) cfg.model.experts = *experts;
    if (topk) cfg.model.topk = *topk;
    if (dyn_layers) cfg.model.dyn_layers = *dyn_layers;
    if (static_layers) cfg.model.static_layers = *static_layers;

    if (gen->parsed()) {
      if (classes) cfg.synthetic.classes = *classes;
      if (per_class) cfg.synthetic.slides_per_class = *per_class;
      if (roots) cfg.synthetic.roots = *roots;
      if (d_in) cfg.synthetic.d_in = *d_in;
      if (signal) cfg.synthetic.signal = *signal;
      if (noise) cfg.synthetic.noise = *noise;
      if (fraction) cfg.synthetic.signal_fraction = *fraction;
      if (decoy) cfg.synthetic.decoy_rate = *decoy;
      return cmd_generate(g, cfg, out);
    }
    if (tr->parsed()) return cmd_train(g, cfg, resume, out);
    if (ev->parsed()) return cmd_eval(g, cfg, checkpoint, split, out);
    if (ab->parsed()) {
      auto split_list = [](const std::string& s) {
        std::vector<std::string> parts;
        std::stringstream ss(s);
        std::string p;
        while (std::getline(ss, p, ',')) parts.push_back(p);
        return parts;
      };
      auto number = [](const std::string& s, const char* what) {
        try {
          std::size_t used = 0;
          const double v = std::stod(s, &used);
          if (used != s.size()) throw std::invalid_argument(s);
          return v;
        } catch (const std::exception&) {
          throw ContractError(std::string("bad ") + what + " '" + s + "'");
        }
      };
      if (variants_arg) cfg.ablate.variants = split_list(*variants_arg);
      if (seeds_arg) {
        cfg.ablate.seeds.clear();
        for (const auto& s : split_list(*seeds_arg)) cfg.ablate.seeds.push_back(static_cast<std::uint64_t>(number(s, "seed")));
      }
      if (sweep_arg) {
        const auto eq = sweep_arg->find('=');
        if (eq == std::string::npos) throw ContractError("--sweep expects axis=v1,v2,...");
        cfg.ablate.sweep.axis = sweep_arg->substr(0, eq);
        cfg.ablate.sweep.values.clear();
        for (const auto& s : split_list(sweep_arg->substr(eq + 1))) cfg.ablate.sweep.values.push_back(number(s, "sweep value"));
      }
      return cmd_ablate(g, cfg, out);
    }
    if (hm->parsed()) return cmd_heatmap(g, cfg, checkpoint, bag_path, out);
    if (sc->parsed()) return cmd_scan(bag_path, validate, out);
    throw ContractError("no command given");
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
}

}  // namespace moemil
