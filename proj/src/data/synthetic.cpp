#include "moemil/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "moemil/errors.hpp"
#include "moemil/random.hpp"

namespace moemil {

std::size_t SyntheticSpec::signal_regions() const {
  const auto m = static_cast<std::size_t>(std::lround(signal_fraction * static_cast<double>(roots)));
  return std::clamp<std::size_t>(m, 1, roots);
}

void SyntheticSpec::validate() const {
  if (classes < 1 || slides_per_class < 1 || roots < 1 || d_in < 1) {
    throw ContractError("synthetic spec: counts must be positive");
  }
  for (auto f : fanouts)
    if (f < 1) throw ContractError("synthetic spec: fan-outs must be positive");
  if (fanouts.size() > 254) throw ContractError("synthetic spec: too many levels");
  if (!(signal_fraction > 0.0 && signal_fraction <= 1.0)) {
    throw ContractError("synthetic spec: signal_fraction must lie in (0, 1]");
  }
  if (!(decoy_rate >= 0.0 && decoy_rate <= 1.0)) throw ContractError("synthetic spec: decoy_rate must lie in [0, 1]");
  if (!(noise >= 0.0) || !std::isfinite(signal)) throw ContractError("synthetic spec: invalid signal/noise");
  if (classes < 2 && decoy_rate > 0.0) throw ContractError("synthetic spec: decoys need at least two classes");
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return nlohmann::json{{"classes", s.classes},         {"slides_per_class", s.slides_per_class},
                        {"roots", s.roots},             {"fanouts", s.fanouts},
                        {"d_in", s.d_in},               {"signal", s.signal},
                        {"noise", s.noise},             {"signal_fraction", s.signal_fraction},
                        {"decoy_rate", s.decoy_rate},   {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("synthetic spec must be a JSON object");
  static const std::set<std::string> known = {"classes", "slides_per_class", "roots", "fanouts", "d_in",
                                              "signal",  "noise",            "signal_fraction", "decoy_rate", "seed"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ContractError("synthetic spec: unknown key '" + key + "'");
  SyntheticSpec s;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("classes", s.classes);
    get("slides_per_class", s.slides_per_class);
    get("roots", s.roots);
    get("fanouts", s.fanouts);
    get("d_in", s.d_in);
    get("signal", s.signal);
    get("noise", s.noise);
    get("signal_fraction", s.signal_fraction);
    get("decoy_rate", s.decoy_rate);
    get("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("synthetic spec: ") + e.what());
  }
  return s;
}

namespace {

std::vector<double> unit_direction(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

// Appends the subtree under `parent` (already emitted) in depth-first order.
void expand(std::vector<BagRecord>& out, std::size_t parent, const std::vector<std::size_t>& fanouts,
            std::size_t d_in) {
  const int level = out[parent].level;
  if (static_cast<std::size_t>(level) > fanouts.size()) return;
  const std::size_t f = fanouts[static_cast<std::size_t>(level - 1)];
  const auto sub = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(f))));
  for (std::size_t j = 0; j < f; ++j) {
    BagRecord r;
    r.level = level + 1;
    r.path = out[parent].path;
    r.path.push_back(static_cast<std::uint16_t>(j + 1));
    r.coord.row = static_cast<std::uint16_t>(out[parent].coord.row * sub + j / sub);
    r.coord.col = static_cast<std::uint16_t>(out[parent].coord.col * sub + j % sub);
    r.features.assign(d_in, 0.0f);
    out.push_back(std::move(r));
    expand(out, out.size() - 1, fanouts, d_in);
  }
}

void plant(Bag& bag, std::uint16_t root, int level, const std::vector<double>& dir, double strength) {
  for (auto& r : bag.records) {
    if (r.level != level || r.path.front() != root) continue;
    for (std::size_t i = 0; i < r.features.size(); ++i) r.features[i] += static_cast<float>(strength * dir[i]);
  }
}

}  // namespace

std::vector<Bag> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int R = spec.levels();
  // Evidence levels: 2 and 3 when present; a single-level forest uses level 1.
  const int first_level = R >= 2 ? 2 : 1;
  const int second_level = R >= 3 ? 3 : first_level;
  std::vector<std::vector<double>> dir_first, dir_second;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    dir_first.push_back(unit_direction(spec.d_in, rng));
    dir_second.push_back(unit_direction(spec.d_in, rng));
  }
  const auto grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.roots))));
  const std::size_t m = spec.signal_regions();

  std::vector<Bag> bags;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t k = 0; k < spec.slides_per_class; ++k) {
      Bag bag;
      char id[64];
      std::snprintf(id, sizeof(id), "syn_c%zu_%03zu", c, k);
      bag.slide_id = id;
      bag.label = static_cast<std::uint32_t>(c);
      bag.levels = R;
      for (std::size_t i = 0; i < spec.roots; ++i) {
        BagRecord root;
        root.level = 1;
        root.path = {static_cast<std::uint16_t>(i + 1)};
        root.coord = {static_cast<std::uint16_t>(i / grid), static_cast<std::uint16_t>(i % grid)};
        root.features.assign(spec.d_in, 0.0f);
        bag.records.push_back(std::move(root));
        expand(bag.records, bag.records.size() - 1, spec.fanouts, spec.d_in);
      }
      for (auto& r : bag.records)
        for (auto& v : r.features) v = static_cast<float>(spec.noise * rng.normal());

      std::vector<std::uint16_t> regions(spec.roots);
      for (std::size_t i = 0; i < spec.roots; ++i) regions[i] = static_cast<std::uint16_t>(i + 1);
      rng.shuffle(regions);
      for (std::size_t i = 0; i < m; ++i) {
        plant(bag, regions[i], first_level, dir_first[c], spec.signal);
        if (second_level != first_level) plant(bag, regions[i], second_level, dir_second[c], spec.signal);
      }
      if (spec.decoy_rate > 0.0 && rng.uniform() < spec.decoy_rate) {
        const std::size_t decoy = (c + 1 + rng.below(spec.classes - 1)) % spec.classes;
        // Decoy halves go to disjoint non-signal regions.
        std::size_t next = m;
        for (std::size_t i = 0; i < m && next < regions.size(); ++i, ++next)
          plant(bag, regions[next], first_level, dir_first[decoy], spec.signal);
        if (second_level != first_level) {
          for (std::size_t i = 0; i < m && next < regions.size(); ++i, ++next)
            plant(bag, regions[next], second_level, dir_second[decoy], spec.signal);
        }
      }
      bags.push_back(std::move(bag));
    }
  }
  return bags;
}

}  // namespace moemil
