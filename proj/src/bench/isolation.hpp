#pragma once

#include <cstdint>
#include <string>

#include "util/result.hpp"

// Scenario 1: two synthetic dApps on one shared core. Phase 1 both behave
// (60% / 20% of the calibrated instruction rate), Phase 2 the misbehaving one
// saturates, Phase 3 gas budgets pin both back to their intended shares.

namespace bench {

struct IsolationScenario {
    double regular_budget_pct = 60.0;
    double misbehaving_initial_pct = 20.0;
    uint64_t saturation_at_us = 2000000;
    uint64_t metering_on_at_us = 3000000;
    uint64_t total_us = 5000000;
    uint64_t window_us = 10000;
    uint64_t avg_window_us = 100000;

    // harness knobs
    uint64_t pacer_period_us = 1000;
    double pacer_margin_pct = 2.0; // ticks delivered slightly fast: the gas
                                   // budget, not tick arrival, is the binding
                                   // constraint once metering is on
    uint64_t calibration_us = 1000000;
    uint64_t bootstrap_skip_us = 500000;
    int pin_cpu = 0; // core the guests and calibration share; -1 disables
    int guest_nice = -19; // shields pinned guests from host background load

    util::Result<bool, std::string> validate() const;
};

util::Result<IsolationScenario, std::string>
isolation_scenario_from_json_file(const std::string& path);
std::string isolation_scenario_to_json(const IsolationScenario& s);

struct IsolationOutputs {
    uint64_t capacity_fuel_per_window = 0;
    double fuel_per_iteration = 0;
    std::string usage_csv;
    std::string meta_json;
};

// Runs the experiment and writes isolation_usage.csv + isolation_meta.json
// into out_dir. Requires the busy_dapp.wasm module under guests_dir.
util::Result<IsolationOutputs, std::string>
run_isolation(const IsolationScenario& scn, const std::string& guests_dir,
              const std::string& out_dir);

// Offline acceptance predicates, recomputed from the CSV + meta alone.
struct IsolationCheck {
    double p1_regular = 0, p1_misbehaving = 0;   // phase-1 mean shares (%)
    double p2_regular_min = 0;                    // lowest phase-2 avg window
    double p3_reg_worst_dev = 0, p3_mis_worst_dev = 0; // pp from targets
    uint64_t budget_violations = 0;
    size_t avg_windows = 0;
    bool phase1_ok = false;
    bool phase2_ok = false;
    bool phase3_ok = false;
    bool budget_bound_ok = false;

    bool all_ok() const { return phase1_ok && phase2_ok && phase3_ok && budget_bound_ok; }
};

util::Result<IsolationCheck, std::string> check_isolation(const std::string& out_dir);

// Writes shares.dat (t_ms, regular, misbehaving per averaging window).
util::Result<bool, std::string> write_shares_dat(const std::string& out_dir);

std::string isolation_summary(const IsolationCheck& c);

} // namespace bench
