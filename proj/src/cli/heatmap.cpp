#include "moemil/cli/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "moemil/errors.hpp"

namespace moemil {

std::vector<double> normalize_level(const std::vector<double>& raw) {
  if (raw.empty()) return {};
  if (raw.size() == 1) return {1.0};
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  std::vector<double> out(raw.size(), 0.5);
  if (*hi == *lo) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - *lo) / (*hi - *lo);
  return out;
}

HeatmapBundle build_heatmap(const Bag& bag, const std::vector<double>& attention) {
  if (attention.size() != bag.size()) throw ContractError("heatmap: attention/record count mismatch");
  std::map<int, std::vector<std::size_t>> by_level;
  for (std::size_t i = 0; i < bag.size(); ++i) by_level[bag.records[i].level].push_back(i);
  HeatmapBundle b;
  for (const auto& [level, idx] : by_level) {
    LevelGrid g;
    g.level = level;
    std::uint16_t r0 = 0xFFFF, c0 = 0xFFFF, r1 = 0, c1 = 0;
    std::vector<double> raw;
    for (auto i : idx) {
      const auto& rc = bag.records[i].coord;
      r0 = std::min(r0, rc.row);
      c0 = std::min(c0, rc.col);
      r1 = std::max(r1, rc.row);
      c1 = std::max(c1, rc.col);
      raw.push_back(attention[i]);
    }
    g.row0 = r0;
    g.col0 = c0;
    g.rows = static_cast<std::size_t>(r1 - r0) + 1;
    g.cols = static_cast<std::size_t>(c1 - c0) + 1;
    g.value.assign(g.rows * g.cols, 0.0);
    g.present.assign(g.rows * g.cols, false);
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    g.min = *lo;
    g.max = *hi;
    const std::vector<double> norm = normalize_level(raw);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto& rc = bag.records[idx[j]].coord;
      const std::size_t cell = static_cast<std::size_t>(rc.row - r0) * g.cols + static_cast<std::size_t>(rc.col - c0);
      g.value[cell] = norm[j];
      g.present[cell] = true;
    }
    b.levels.push_back(std::move(g));
  }
  return b;
}

std::string render_pgm(const LevelGrid& g) {
  std::string out = "P5\n" + std::to_string(g.cols) + " " + std::to_string(g.rows) + "\n255\n";
  for (std::size_t i = 0; i < g.value.size(); ++i) {
    const int v = g.present[i] ? 1 + static_cast<int>(std::lround(254.0 * std::clamp(g.value[i], 0.0, 1.0))) : 0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return out;
}

std::array<int, 3> ramp_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  // blue (49,54,149) -> white -> red (165,0,38)
  const std::array<double, 3> blue = {49, 54, 149}, white = {255, 255, 255}, red = {165, 0, 38};
  std::array<int, 3> out{};
  for (std::size_t k = 0; k < 3; ++k) {
    const double x = v < 0.5 ? blue[k] + (white[k] - blue[k]) * (v / 0.5) : white[k] + (red[k] - white[k]) * ((v - 0.5) / 0.5);
    out[k] = static_cast<int>(std::lround(x));
  }
  return out;
}

std::string render_svg(const HeatmapBundle& b, const std::string& title) {
  const double panel = 240.0, gap = 24.0, top = 40.0;
  const double width = gap + static_cast<double>(b.levels.size()) * (panel + gap);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + panel + gap
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"" << gap << "\" y=\"18\">" << title << "</text>\n";
  for (std::size_t p = 0; p < b.levels.size(); ++p) {
    const LevelGrid& g = b.levels[p];
    const double x0 = gap + static_cast<double>(p) * (panel + gap);
    const double cell = panel / static_cast<double>(std::max(g.rows, g.cols));
    os << "<text x=\"" << x0 << "\" y=\"" << top - 6 << "\">level " << g.level << "</text>\n";
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t c = 0; c < g.cols; ++c) {
        std::string fill = "rgb(220,220,220)";
        if (g.has(r, c)) {
          const auto rgb = ramp_color(g.at(r, c));
          fill = "rgb(" + std::to_string(rgb[0]) + "," + std::to_string(rgb[1]) + "," + std::to_string(rgb[2]) + ")";
        }
        os << "<rect x=\"" << x0 + static_cast<double>(c) * cell << "\" y=\"" << top + static_cast<double>(r) * cell
           << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << fill << "\"/>\n";
      }
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string attention_csv(const Bag& bag, const std::vector<double>& attention) {
  if (attention.size() != bag.size()) throw ContractError("heatmap: attention/record count mismatch");
  const HeatmapBundle b = build_heatmap(bag, attention);
  std::ostringstream os;
  os << "token,level,path,row,col,attention,normalized\n";
  char buf[64];
  for (std::size_t i = 0; i < bag.size(); ++i) {
    const auto& r = bag.records[i];
    const LevelGrid* g = nullptr;
    for (const auto& lg : b.levels)
      if (lg.level == r.level) g = &lg;
    const double norm = g->at(r.coord.row - g->row0, r.coord.col - g->col0);
    std::string path = path_str(r.path);
    std::replace(path.begin(), path.end(), ',', '.');
    os << i << ',' << r.level << ',' << path << ',' << r.coord.row << ',' << r.coord.col << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", attention[i]);
    os << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.6f", norm);
    os << buf << '\n';
  }
  return os.str();
}

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  f << s;
  if (!f) throw IoError("failed writing " + p.string());
}

}  // namespace

void write_heatmap_files(const Bag& bag, const std::vector<double>& attention, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const HeatmapBundle b = build_heatmap(bag, attention);
  for (const auto& g : b.levels) write_text(dir / ("level_" + std::to_string(g.level) + ".pgm"), render_pgm(g));
  write_text(dir / "heatmap.svg", render_svg(b, "attention: " + bag.slide_id));
  write_text(dir / "attention.csv", attention_csv(bag, attention));
}

}  // namespace moemil
