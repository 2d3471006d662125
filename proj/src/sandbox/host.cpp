#include "sandbox/host.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "util/clock.hpp"

namespace sandbox {

uint64_t BudgetSpec::resolve(uint64_t capacity_fuel_per_window) const {
    switch (kind) {
    case Kind::Unlimited: return kUnlimitedFuel;
    case Kind::Fixed: return fixed.instructions_per_window;
    case Kind::Percent:
        return uint64_t(std::floor(percent / 100.0 * double(capacity_fuel_per_window)));
    }
    return kUnlimitedFuel;
}

util::Result<Manifest, std::string> manifest_from_json_text(const std::string& text) {
    using R = util::Result<Manifest, std::string>;
    try {
        const auto j = nlohmann::json::parse(text);
        Manifest m;
        m.name = j.at("name").get<std::string>();
        m.bytecode_path = j.at("bytecode_path").get<std::string>();
        if (j.contains("allowed_endpoints")) {
            for (const auto& e : j.at("allowed_endpoints"))
                m.allowed_endpoints.push_back(
                    Endpoint{e.at("host").get<std::string>(), e.at("port").get<uint16_t>()});
        }
        if (j.contains("budget")) {
            const auto& b = j.at("budget");
            if (b.is_string() && b.get<std::string>() == "unlimited") {
                m.budget = BudgetSpec::unlimited();
            } else if (b.is_object() && b.contains("percent")) {
                m.budget = BudgetSpec::percent_of_capacity(b.at("percent").get<double>());
            } else if (b.is_object()) {
                m.budget = BudgetSpec::fixed_fuel(
                    b.at("instructions_per_window").get<uint64_t>(),
                    b.value("window_us", uint64_t(10000)));
            } else {
                return R(std::string("manifest: unrecognised budget form"));
            }
        }
        return R(std::move(m));
    } catch (const std::exception& e) {
        return R(std::string("manifest: ") + e.what());
    }
}

util::Result<Manifest, std::string> manifest_from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) return util::Result<Manifest, std::string>("manifest: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return manifest_from_json_text(ss.str());
}

Host::Host(Options opts) : opts_(opts), scheduler_(opts.window_us) {}

Host::~Host() {
    scheduler_.stop();
    std::lock_guard lk(mu_);
    for (auto& w : instances_)
        if (auto inst = w.lock()) {
            inst->request_stop();
            inst->join();
        }
}

util::Result<ModuleHandle, LoadError> Host::load_module(const Manifest& manifest) {
    using R = util::Result<ModuleHandle, LoadError>;
    if (manifest.name.empty())
        return R(LoadError{LoadErrorKind::InvalidManifest, "empty module name"});
    {
        std::lock_guard lk(mu_);
        if (loaded_names_.contains(manifest.name))
            return R(LoadError{LoadErrorKind::InvalidManifest,
                               "duplicate module name " + manifest.name});
    }

    std::ifstream f(manifest.bytecode_path, std::ios::binary);
    if (!f)
        return R(LoadError{LoadErrorKind::InvalidBytecode,
                           "cannot read " + manifest.bytecode_path});
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    auto parsed = Module::parse(bytes);
    if (!parsed.ok()) return R(parsed.error());

    {
        std::lock_guard lk(mu_);
        loaded_names_.insert(manifest.name);
    }
    return R(ModuleHandle{parsed.value(), manifest});
}

size_t Host::live_instances() {
    std::lock_guard lk(mu_);
    size_t n = 0;
    for (auto it = instances_.begin(); it != instances_.end();) {
        if (it->expired()) it = instances_.erase(it);
        else {
            ++n;
            ++it;
        }
    }
    return n;
}

util::Result<std::shared_ptr<Instance>, SpawnError>
Host::spawn_instance(const ModuleHandle& handle, uint64_t fuel_budget) {
    using R = util::Result<std::shared_ptr<Instance>, SpawnError>;
    if (live_instances() >= opts_.max_instances) return R(SpawnError::ResourceExhausted);

    InstanceConfig cfg;
    {
        std::lock_guard lk(mu_);
        cfg.id = next_instance_id_++;
    }
    cfg.name = handle.manifest.name;
    cfg.allowed_endpoints = handle.manifest.allowed_endpoints;
    cfg.transport = opts_.transport;
    cfg.hub = opts_.hub;
    cfg.max_pages_cap = opts_.max_pages;
    cfg.pin_cpu = opts_.pin_guests_to_cpu;
    cfg.nice = opts_.guest_nice;

    auto inst = std::make_shared<Instance>(handle.module, cfg);
    scheduler_.add(inst, fuel_budget);
    {
        std::lock_guard lk(mu_);
        instances_.push_back(inst);
    }
    return R(std::move(inst));
}

util::Result<uint64_t, std::string> calibrate_capacity(Host& host,
                                                       const std::string& busy_wasm_path,
                                                       uint64_t duration_us) {
    using R = util::Result<uint64_t, std::string>;
    const uint64_t window_us = host.scheduler().window_us();
    if (duration_us < 3 * window_us)
        return R(std::string("CalibrationTooShort: need at least three windows"));

    Manifest m;
    m.name = "calibration-" + std::to_string(util::now_us());
    m.bytecode_path = busy_wasm_path;
    m.budget = BudgetSpec::unlimited();
    auto loaded = host.load_module(m);
    if (!loaded.ok()) return R("calibration: " + loaded.error().detail);

    auto spawned = host.spawn_instance(loaded.value(), kUnlimitedFuel);
    if (!spawned.ok()) return R(std::string("calibration: instance limit reached"));
    auto inst = spawned.value();

    if (!host.scheduler().running()) host.scheduler().start();
    const uint64_t first = host.scheduler().windows_closed();
    if (!inst->start()) return R(std::string("calibration: busy module lacks dapp_main"));
    util::sleep_until_us(util::now_us() + duration_us);
    inst->request_stop();
    inst->join();
    const uint64_t last = host.scheduler().windows_closed();

    // skip two warm-up windows (thread start, first partial window)
    std::vector<uint64_t> per_window;
    for (uint64_t w = first + 2; w < last; w++) {
        auto u = host.scheduler().usage(inst->id(), w);
        if (u.ok() && u.value().instructions_used > 0)
            per_window.push_back(u.value().instructions_used);
    }
    if (per_window.size() < 3)
        return R(std::string("CalibrationTooShort: too few full windows measured"));
    // capacity means the sustainable uncontended per-window rate: windows
    // where the calibration guest was preempted read low, so take an upper
    // percentile (not the max, which can ride turbo/cache transients)
    std::sort(per_window.begin(), per_window.end());
    return R(per_window[std::min(per_window.size() - 1, per_window.size() * 80 / 100)]);
}

} // namespace sandbox
