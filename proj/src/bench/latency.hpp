#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agent/scenario.hpp"
#include "bench/bench_util.hpp"
#include "util/result.hpp"

// Scenario 2: control-loop latency of the reference dApp, native vs sandboxed,
// stage-by-stage (decode, process, encode, transmit) as timed inside the guest.

namespace bench {

agent::ScenarioConfig default_latency_scenario(uint64_t seed, uint32_t loops,
                                               uint32_t period_us = 5000);

struct LatencyOptions {
    std::vector<Arm> arms = {Arm::Native, Arm::Sandboxed};
    uint32_t loops = 1000;
    uint32_t period_us = 5000;
    uint64_t seed = 42;
    uint32_t repeats = 1;
    std::string guests_dir;
    std::string out_dir;
};

struct ArmStats {
    Arm arm = Arm::Native;
    size_t loops = 0;
    double median_decode_us = 0, median_process_us = 0, median_encode_us = 0,
           median_transmit_us = 0;
    double median_cum_us = 0, p90_cum_us = 0, p99_cum_us = 0;
    double median_rtt_us = 0;
};

struct LatencyResult {
    std::vector<ArmStats> arms;
    double sandbox_over_native = 0.0; // median cumulative ratio; 0 if one arm
    bool rt_bound_ok = true;          // sandboxed median cumulative < 10 ms
    bool ordering_ok = true;          // native median <= sandboxed median
    std::string stages_csv;
};

util::Result<LatencyResult, std::string> run_latency(const LatencyOptions& opts);

std::string latency_summary(const LatencyResult& r);

} // namespace bench
