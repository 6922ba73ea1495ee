#pragma once

// Per-level attention grids for display.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moemil/data/bag.hpp"

namespace moemil {

struct LevelGrid {
  int level = 1;
  std::uint16_t row0 = 0, col0 = 0;  // smallest coordinate at this level
  std::size_t rows = 0, cols = 0;    // coordinate range of the level
  std::vector<double> value;         // row-major, normalized to [0,1]
  std::vector<bool> present;         // false: no patch at this cell
  double min = 0.0, max = 0.0;       // raw attention range used for normalization

  double at(std::size_t r, std::size_t c) const { return value[r * cols + c]; }
  bool has(std::size_t r, std::size_t c) const { return present[r * cols + c]; }
};

struct HeatmapBundle {
  std::vector<LevelGrid> levels;  // one per level that has tokens, ascending
};

// Min-max renormalization within one level. A level with a single token maps
// to 1.0; a constant level with several tokens maps to 0.5.
std::vector<double> normalize_level(const std::vector<double>& raw);

// `attention` is per record (bag order).
HeatmapBundle build_heatmap(const Bag& bag, const std::vector<double>& attention);

// 8-bit P5: absent cells 0, present cells 1 + round(254 v).
std::string render_pgm(const LevelGrid& g);
// Level panels side by side; blue (0) -> white (0.5) -> red (1); absent
// cells light gray.
std::string render_svg(const HeatmapBundle& b, const std::string& title);
// "r,g,b" for the diverging ramp.
std::array<int, 3> ramp_color(double v);

// token,level,path,row,col,attention,normalized (path joined by dots);
// attention printed with 17 significant digits so it round-trips exactly.
std::string attention_csv(const Bag& bag, const std::vector<double>& attention);

// Writes level_<r>.pgm, heatmap.svg and attention.csv into `dir`.
void write_heatmap_files(const Bag& bag, const std::vector<double>& attention, const std::filesystem::path& dir);

}  // namespace moemil
