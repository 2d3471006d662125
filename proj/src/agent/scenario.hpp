#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "util/result.hpp"

namespace agent {

struct Incumbent {
    uint16_t prb = 0;
    double amplitude = 0.0;
    uint64_t start_us = 0;
    uint64_t stop_us = UINT64_MAX;
};

// Synthetic-spectrum scenario: seeded noise plus tone incumbents, replacing
// the RF loopback with a reproducible source.
struct ScenarioConfig {
    uint16_t n_prb = 64;
    uint32_t fft_size = 1024;
    double noise_sigma = 0.05; // per-component std of the complex Gaussian noise
    std::vector<Incumbent> incumbents;
    uint32_t indication_period_us = 10000;
    uint64_t duration_us = 1000000;
    uint64_t seed = 1;

    // SNR of an incumbent per the artifact definition:
    // 10*log10(amplitude^2 / (2*noise_sigma^2)).
    static double amplitude_for_snr_db(double snr_db, double noise_sigma);

    util::Result<bool, std::string> validate() const;
};

util::Result<ScenarioConfig, std::string> scenario_from_json_text(const std::string& text);
util::Result<ScenarioConfig, std::string> scenario_from_json_file(const std::string& path);
std::string scenario_to_json(const ScenarioConfig& cfg);

} // namespace agent
