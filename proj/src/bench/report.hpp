#pragma once

#include <string>

#include "util/result.hpp"

namespace bench {

// Rebuilds the human-readable summary and gnuplot .dat files from the CSV
// artifacts in `dir` alone. Returns the summary text (also written to
// report.txt); MissingInput if no scenario output is present.
util::Result<std::string, std::string> build_report(const std::string& dir);

} // namespace bench
