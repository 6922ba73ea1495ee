#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "moemil/data/bag.hpp"

namespace moemil {

// Planted-signal multi-resolution bags.
//
// Each bag is a forest of `roots` level-1 patches expanded by `fanouts`
// (fanouts[0] children per level-1 patch, ...). Every feature is isotropic
// Gaussian noise (sigma `noise`). A bag of class c carries its evidence in a
// random subset of root regions: inside each such region the level-2 tokens
// get `signal * u2[c]` and the level-3 tokens `signal * u3[c]` added, where
// u2/u3 are fixed random unit directions per class and level.
//
// With probability `decoy_rate` a bag also carries a decoy class c' != c:
// u2[c'] is planted in some other regions and u3[c'] in yet other ones, so
// the decoy never has both levels in one region. Per level, or averaged over
// the bag, a decoy bag then looks like a two-class mixture; only the
// co-occurrence of both levels inside one region identifies the label.
struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t slides_per_class = 30;
  std::size_t roots = 6;
  std::vector<std::size_t> fanouts = {2, 2};
  std::size_t d_in = 1024;
  double signal = 3.0;
  double noise = 1.0;
  double signal_fraction = 0.34;  // of roots that carry the label's evidence
  double decoy_rate = 0.3;
  std::uint64_t seed = 7;

  int levels() const { return static_cast<int>(fanouts.size()) + 1; }
  // Root regions per bag that carry the class evidence (at least 1).
  std::size_t signal_regions() const;
  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

// Bags ordered by class, then index; slide ids "syn_c<class>_<index>".
std::vector<Bag> generate_synthetic(const SyntheticSpec& spec);

}  // namespace moemil
