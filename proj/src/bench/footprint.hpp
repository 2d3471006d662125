#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bench/bench_util.hpp"
#include "util/result.hpp"

// Scenario 3: processing and memory footprint per arm, each measured in its
// own child process (rusage of the child: CPU time + peak RSS).

namespace bench {

struct FootprintOptions {
    std::vector<Arm> arms = {Arm::Native, Arm::Sandboxed};
    uint64_t duration_us = 5000000;
    uint64_t seed = 42;
    uint32_t period_us = 5000;
    uint32_t repeats = 1;
    std::string guests_dir;
    std::string out_dir;
    std::string self_exe; // the bench binary, re-executed as footprint-child
};

struct FootprintRecord {
    Arm arm = Arm::Native;
    double cpu_time_ms = 0.0;
    uint64_t peak_rss_bytes = 0;
};

struct FootprintResult {
    std::vector<FootprintRecord> records; // one per (arm, repeat)
    double cpu_ratio = 0.0;               // sandboxed / native, medians
    double mem_ratio = 0.0;
    bool cpu_positive = true;
    bool mem_ratio_above_one = true;
    std::string csv_path;
};

util::Result<FootprintResult, std::string> run_footprint(const FootprintOptions& opts);

// Entry point of the hidden child subcommand: runs agent + one arm for the
// given duration inside this process. Returns the process exit code.
int footprint_child(Arm arm, uint64_t duration_us, uint64_t seed, uint32_t period_us,
                    const std::string& guests_dir);

std::string footprint_summary(const FootprintResult& r);

} // namespace bench
