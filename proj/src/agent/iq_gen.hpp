#pragma once

#include <cstdint>

#include "agent/scenario.hpp"
#include "e3/message.hpp"

namespace agent {

// Deterministic stream generator: same (seed) sequence on every run, no
// dependence on library distribution internals.
struct Splitmix64 {
    uint64_t state;

    explicit Splitmix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        state += 0x9E3779B97F4A7C15ull;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double u01() { return double(next() >> 11) * 0x1.0p-53; }
};

// One frame of fft_size samples at scenario time t_us: complex Gaussian noise
// (Box-Muller over the seeded stream) plus, for each incumbent active at t_us,
// a tone centered in its PRB's bin range. Deterministic in (cfg.seed, t_us).
e3::IqFrame gen_iq_frame(const ScenarioConfig& cfg, uint64_t t_us);

// Ground truth for detection checks: PRBs of incumbents active at t_us.
std::vector<uint16_t> active_incumbent_prbs(const ScenarioConfig& cfg, uint64_t t_us);

} // namespace agent
