#pragma once

// moemil generate | train | eval | ablate | heatmap | scan
// Exit codes: 0 ok, 2 config/contract error, 3 IO/format error, 4 numeric
// error, 1 anything else.

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "moemil/data/bag.hpp"
#include "moemil/model/model.hpp"

namespace moemil {

inline constexpr int kExitOk = 0;
inline constexpr int kExitContract = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Maps the exception currently being handled to an exit code.
int exit_code_for_current_exception(std::ostream& err);

// One JSON record per slide: prediction, probabilities, attention per token
// (record order) and per-layer routing load.
nlohmann::json forward_record(const Bag& bag, const ForwardOutput<float>& out);

// Both scan orders, each under a "# <scheme>" header line.
void write_scan_sections(std::ostream& os, const Bag& bag);
// Validates the region-nested section of `text` (or the whole text when it
// has no section headers). Empty string when valid.
std::string validate_scan_sections(const std::string& text);

}  // namespace moemil
