#include "agent/scenario.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace agent {

double ScenarioConfig::amplitude_for_snr_db(double snr_db, double noise_sigma) {
    return std::sqrt(std::pow(10.0, snr_db / 10.0) * 2.0 * noise_sigma * noise_sigma);
}

util::Result<bool, std::string> ScenarioConfig::validate() const {
    using R = util::Result<bool, std::string>;
    if (n_prb == 0) return R(std::string("n_prb must be > 0"));
    if (fft_size == 0 || (fft_size & (fft_size - 1)) != 0)
        return R(std::string("fft_size must be a power of two"));
    if (fft_size % n_prb != 0)
        return R(std::string("fft_size must be a multiple of n_prb"));
    if (noise_sigma < 0) return R(std::string("noise_sigma must be >= 0"));
    if (indication_period_us < 100)
        return R(std::string("indication_period_us must be >= 100"));
    for (const auto& inc : incumbents) {
        if (inc.prb >= n_prb) return R(std::string("incumbent prb out of range"));
        if (inc.amplitude < 0) return R(std::string("incumbent amplitude must be >= 0"));
    }
    return R(true);
}

util::Result<ScenarioConfig, std::string> scenario_from_json_text(const std::string& text) {
    using R = util::Result<ScenarioConfig, std::string>;
    try {
        const auto j = nlohmann::json::parse(text);
        ScenarioConfig c;
        c.n_prb = j.value("n_prb", c.n_prb);
        c.fft_size = j.value("fft_size", c.fft_size);
        c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
        c.indication_period_us = j.value("indication_period_us", c.indication_period_us);
        c.duration_us = j.value("duration_us", c.duration_us);
        c.seed = j.value("seed", c.seed);
        if (j.contains("incumbents")) {
            for (const auto& ji : j.at("incumbents")) {
                Incumbent inc;
                inc.prb = ji.at("prb").get<uint16_t>();
                inc.amplitude = ji.at("amplitude").get<double>();
                inc.start_us = ji.value("start_us", uint64_t(0));
                inc.stop_us = ji.value("stop_us", UINT64_MAX);
                c.incumbents.push_back(inc);
            }
        }
        auto v = c.validate();
        if (!v.ok()) return R(v.error());
        return R(std::move(c));
    } catch (const std::exception& e) {
        return R(std::string("scenario: ") + e.what());
    }
}

util::Result<ScenarioConfig, std::string> scenario_from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) return util::Result<ScenarioConfig, std::string>("scenario: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return scenario_from_json_text(ss.str());
}

std::string scenario_to_json(const ScenarioConfig& cfg) {
    nlohmann::json j;
    j["n_prb"] = cfg.n_prb;
    j["fft_size"] = cfg.fft_size;
    j["noise_sigma"] = cfg.noise_sigma;
    j["indication_period_us"] = cfg.indication_period_us;
    j["duration_us"] = cfg.duration_us;
    j["seed"] = cfg.seed;
    j["incumbents"] = nlohmann::json::array();
    for (const auto& inc : cfg.incumbents) {
        nlohmann::json ji;
        ji["prb"] = inc.prb;
        ji["amplitude"] = inc.amplitude;
        ji["start_us"] = inc.start_us;
        ji["stop_us"] = inc.stop_us;
        j["incumbents"].push_back(ji);
    }
    return j.dump(2);
}

} // namespace agent
