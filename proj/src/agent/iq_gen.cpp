#include "agent/iq_gen.hpp"

#include <algorithm>
#include <cmath>

namespace agent {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

uint64_t mix_seed(uint64_t seed, uint64_t t_us) {
    // distinct stream per frame time; splitmix itself whitens further
    uint64_t z = seed ^ (t_us * 0xFF51AFD7ED558CCDull + 0xC4CEB9FE1A85EC53ull);
    z ^= z >> 33;
    return z;
}

} // namespace

e3::IqFrame gen_iq_frame(const ScenarioConfig& cfg, uint64_t t_us) {
    const uint32_t n = cfg.fft_size;
    std::vector<double> re(n, 0.0), im(n, 0.0);

    if (cfg.noise_sigma > 0.0) {
        Splitmix64 rng(mix_seed(cfg.seed, t_us));
        for (uint32_t i = 0; i < n; i++) {
            const double u1 = 1.0 - rng.u01(); // (0, 1]
            const double u2 = rng.u01();
            const double mag = std::sqrt(-2.0 * std::log(u1));
            re[i] = cfg.noise_sigma * mag * std::cos(kTwoPi * u2);
            im[i] = cfg.noise_sigma * mag * std::sin(kTwoPi * u2);
        }
    }

    const uint32_t bins_per_prb = n / cfg.n_prb;
    for (const auto& inc : cfg.incumbents) {
        if (t_us < inc.start_us || t_us >= inc.stop_us || inc.amplitude == 0.0) continue;
        const uint32_t bin = uint32_t(inc.prb) * bins_per_prb + bins_per_prb / 2;
        const double w = kTwoPi * double(bin) / double(n);
        for (uint32_t i = 0; i < n; i++) {
            const double ph = w * double(i);
            re[i] += inc.amplitude * std::cos(ph);
            im[i] += inc.amplitude * std::sin(ph);
        }
    }

    e3::IqFrame frame;
    frame.samples.resize(n);
    for (uint32_t i = 0; i < n; i++) {
        frame.samples[i].i = float(re[i]);
        frame.samples[i].q = float(im[i]);
    }
    return frame;
}

std::vector<uint16_t> active_incumbent_prbs(const ScenarioConfig& cfg, uint64_t t_us) {
    std::vector<uint16_t> prbs;
    for (const auto& inc : cfg.incumbents)
        if (t_us >= inc.start_us && t_us < inc.stop_us && inc.amplitude > 0.0)
            prbs.push_back(inc.prb);
    std::sort(prbs.begin(), prbs.end());
    prbs.erase(std::unique(prbs.begin(), prbs.end()), prbs.end());
    return prbs;
}

} // namespace agent
