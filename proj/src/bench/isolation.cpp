#include "bench/isolation.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "bench/bench_util.hpp"
#include "json.hpp"
#include "sandbox/host.hpp"
#include "util/clock.hpp"

namespace bench {

using sandbox::Host;
using sandbox::kUnlimitedFuel;
using sandbox::Manifest;
using sandbox::TransportMode;
using sandbox::VirtualHub;

util::Result<bool, std::string> IsolationScenario::validate() const {
    using R = util::Result<bool, std::string>;
    if (regular_budget_pct <= 0 || regular_budget_pct > 100 ||
        misbehaving_initial_pct <= 0 || misbehaving_initial_pct > 100)
        return R(std::string("percentages must be in (0, 100]"));
    if (!(saturation_at_us < metering_on_at_us && metering_on_at_us < total_us))
        return R(std::string("phase boundaries must satisfy saturation < metering < total"));
    if (window_us == 0 || avg_window_us % window_us != 0)
        return R(std::string("avg_window_us must be a multiple of window_us"));
    if (pacer_period_us == 0) return R(std::string("pacer_period_us must be > 0"));
    return R(true);
}

util::Result<IsolationScenario, std::string>
isolation_scenario_from_json_file(const std::string& path) {
    using R = util::Result<IsolationScenario, std::string>;
    std::ifstream f(path);
    if (!f) return R("cannot open " + path);
    try {
        nlohmann::json j;
        f >> j;
        IsolationScenario s;
        s.regular_budget_pct = j.value("regular_budget_pct", s.regular_budget_pct);
        s.misbehaving_initial_pct =
            j.value("misbehaving_initial_pct", s.misbehaving_initial_pct);
        s.saturation_at_us = j.value("saturation_at_us", s.saturation_at_us);
        s.metering_on_at_us = j.value("metering_on_at_us", s.metering_on_at_us);
        s.total_us = j.value("total_us", s.total_us);
        s.window_us = j.value("window_us", s.window_us);
        s.avg_window_us = j.value("avg_window_us", s.avg_window_us);
        s.pacer_period_us = j.value("pacer_period_us", s.pacer_period_us);
        s.pacer_margin_pct = j.value("pacer_margin_pct", s.pacer_margin_pct);
        s.calibration_us = j.value("calibration_us", s.calibration_us);
        s.bootstrap_skip_us = j.value("bootstrap_skip_us", s.bootstrap_skip_us);
        s.pin_cpu = j.value("pin_cpu", s.pin_cpu);
        s.guest_nice = j.value("guest_nice", s.guest_nice);
        auto v = s.validate();
        if (!v.ok()) return R(v.error());
        return R(s);
    } catch (const std::exception& e) {
        return R(std::string("isolation scenario: ") + e.what());
    }
}

std::string isolation_scenario_to_json(const IsolationScenario& s) {
    nlohmann::json j;
    j["regular_budget_pct"] = s.regular_budget_pct;
    j["misbehaving_initial_pct"] = s.misbehaving_initial_pct;
    j["saturation_at_us"] = s.saturation_at_us;
    j["metering_on_at_us"] = s.metering_on_at_us;
    j["total_us"] = s.total_us;
    j["window_us"] = s.window_us;
    j["avg_window_us"] = s.avg_window_us;
    j["pacer_period_us"] = s.pacer_period_us;
    j["pacer_margin_pct"] = s.pacer_margin_pct;
    j["calibration_us"] = s.calibration_us;
    j["bootstrap_skip_us"] = s.bootstrap_skip_us;
    j["pin_cpu"] = s.pin_cpu;
    j["guest_nice"] = s.guest_nice;
    return j.dump(2);
}

namespace {

// fuel cost of one busy-loop kernel iteration, measured with a probe run
// (fractional: the kernel loop is unrolled by the compiler)
util::Result<double, std::string> measure_fuel_per_iteration(Host& host,
                                                             const std::string& busy_wasm) {
    using R = util::Result<double, std::string>;
    constexpr uint64_t kProbeIters = 2000000;
    Manifest m;
    m.name = "fuel-probe";
    m.bytecode_path = busy_wasm;
    auto loaded = host.load_module(m);
    if (!loaded.ok()) return R("probe: " + loaded.error().detail);
    auto spawned = host.spawn_instance(loaded.value(), kUnlimitedFuel);
    if (!spawned.ok()) return R(std::string("probe: instance limit"));
    auto inst = spawned.value();
    inst->write_config("mode=probe\niters=" + std::to_string(kProbeIters) + "\n");
    if (!inst->start()) return R(std::string("probe: missing dapp_main"));
    inst->join();
    const double per_iter =
        double(inst->meter().executed_total.load()) / double(kProbeIters);
    if (per_iter <= 0) return R(std::string("probe: zero fuel per iteration"));
    return R(per_iter);
}

struct PacerEndpoint {
    std::unique_ptr<sandbox::Listener> listener;
    std::unique_ptr<sandbox::Conn> conn;
};

} // namespace

util::Result<IsolationOutputs, std::string>
run_isolation(const IsolationScenario& scn, const std::string& guests_dir,
              const std::string& out_dir) {
    using R = util::Result<IsolationOutputs, std::string>;
    auto valid = scn.validate();
    if (!valid.ok()) return R(valid.error());

    const std::string busy_wasm = guests_dir + "/busy_dapp.wasm";
    OutDir out(out_dir);

    // calibration pass on a throwaway host (fresh window numbering afterwards)
    uint64_t capacity = 0;
    double fuel_per_iter = 0;
    {
        VirtualHub cal_hub;
        Host cal_host(Host::Options{TransportMode::VirtualChannel, &cal_hub, 16, 1024,
                                    scn.window_us, scn.pin_cpu, scn.guest_nice});
        auto cap = sandbox::calibrate_capacity(cal_host, busy_wasm, scn.calibration_us);
        if (!cap.ok()) return R("CalibrationMissing: " + cap.error());
        capacity = cap.value();
        auto fpi = measure_fuel_per_iteration(cal_host, busy_wasm);
        if (!fpi.ok()) return R("CalibrationMissing: " + fpi.error());
        fuel_per_iter = fpi.value();
    }

    // experiment host; scheduler start defines t=0
    VirtualHub hub;
    Host host(Host::Options{TransportMode::VirtualChannel, &hub, 16, 1024,
                            scn.window_us, scn.pin_cpu, scn.guest_nice});

    PacerEndpoint pacers[2];
    const uint16_t pacer_ports[2] = {9501, 9502};
    for (int i = 0; i < 2; i++) {
        auto l = hub.listen("pacer", pacer_ports[i]);
        if (!l.ok()) return R(std::string("pacer listen failed"));
        pacers[i].listener = std::move(l.value());
    }

    const char* names[2] = {"regular", "misbehaving"};
    const double pcts[2] = {scn.regular_budget_pct, scn.misbehaving_initial_pct};
    std::shared_ptr<sandbox::Instance> insts[2];
    for (int i = 0; i < 2; i++) {
        Manifest m;
        m.name = names[i];
        m.bytecode_path = busy_wasm;
        m.allowed_endpoints.push_back(sandbox::Endpoint{"pacer", pacer_ports[i]});
        auto loaded = host.load_module(m);
        if (!loaded.ok()) return R("load: " + loaded.error().detail);
        auto spawned = host.spawn_instance(loaded.value(), kUnlimitedFuel);
        if (!spawned.ok()) return R(std::string("spawn: instance limit"));
        insts[i] = spawned.value();

        const double iters = pcts[i] / 100.0 * double(capacity) *
                             (double(scn.pacer_period_us) / double(scn.window_us)) /
                             fuel_per_iter;
        insts[i]->write_config("mode=paced\npacer_host=pacer\npacer_port=" +
                               std::to_string(pacer_ports[i]) + "\niters_per_period=" +
                               std::to_string(uint64_t(iters)) + "\n");
    }

    host.scheduler().start();
    const uint64_t t0 = util::now_us();
    for (int i = 0; i < 2; i++)
        if (!insts[i]->start()) return R(std::string("guest start failed"));
    for (int i = 0; i < 2; i++) {
        pacers[i].conn = pacers[i].listener->accept(2000000);
        if (!pacers[i].conn) return R(std::string("guest never reached its pacer"));
    }

    // pacing threads: byte 0 per period; the misbehaving one flips to
    // saturation with byte 1 at the phase-2 boundary
    std::thread pacer_threads[2];
    for (int i = 0; i < 2; i++) {
        pacer_threads[i] = std::thread([&, i] {
            const bool misbehaving = i == 1;
            const uint8_t tick = 0;
            const double interval =
                double(scn.pacer_period_us) * 100.0 / (100.0 + scn.pacer_margin_pct);
            for (uint64_t n = 1;; n++) {
                const uint64_t t = uint64_t(double(n) * interval);
                if (t > scn.total_us) break;
                util::sleep_until_us(t0 + t);
                if (misbehaving && t >= scn.saturation_at_us) {
                    const uint8_t saturate = 1;
                    pacers[i].conn->write({&saturate, 1});
                    break;
                }
                if (pacers[i].conn->write({&tick, 1}) <= 0) break;
            }
        });
    }

    // enable gas budgets at the phase-3 boundary
    util::sleep_until_us(t0 + scn.metering_on_at_us);
    host.scheduler().set_budget(
        insts[0]->id(),
        uint64_t(std::floor(scn.regular_budget_pct / 100.0 * double(capacity))));
    host.scheduler().set_budget(
        insts[1]->id(),
        uint64_t(std::floor(scn.misbehaving_initial_pct / 100.0 * double(capacity))));

    util::sleep_until_us(t0 + scn.total_us);
    for (auto& t : pacer_threads) t.join();
    for (auto& inst : insts) inst->request_stop();
    for (auto& inst : insts) inst->join();
    host.scheduler().stop();

    // usage CSV
    IsolationOutputs res;
    res.capacity_fuel_per_window = capacity;
    res.fuel_per_iteration = fuel_per_iter;
    res.usage_csv = out.path("isolation_usage.csv");
    res.meta_json = out.path("isolation_meta.json");
    {
        std::map<uint32_t, std::string> id_to_name;
        for (int i = 0; i < 2; i++) id_to_name[insts[i]->id()] = names[i];
        auto f = out.open("isolation_usage.csv");
        f << "instance,window_index,t_ms,instructions_used,budget,suspended\n";
        for (const auto& u : host.scheduler().usage_log()) {
            f << id_to_name[u.instance_id] << ',' << u.window_index << ',' << u.t_ms
              << ',' << u.instructions_used << ',';
            if (u.budget == kUnlimitedFuel) f << "unlimited";
            else f << u.budget;
            f << ',' << (u.suspended ? 1 : 0) << '\n';
        }
    }
    {
        nlohmann::json meta;
        meta["scenario"] = nlohmann::json::parse(isolation_scenario_to_json(scn));
        meta["capacity_fuel_per_window"] = capacity;
        meta["fuel_per_iteration"] = fuel_per_iter;
        meta["epsilon_fuel"] = 10000;
        auto f = out.open("isolation_meta.json");
        f << meta.dump(2) << '\n';
    }
    auto dat = write_shares_dat(out_dir);
    if (!dat.ok()) return R(dat.error());
    return R(std::move(res));
}

namespace {

struct UsageRows {
    IsolationScenario scn;
    uint64_t capacity = 0;
    // per instance: avg-window index -> (summed fuel, rows present). Whole-VM
    // stalls leave gaps in the window sequence; shares normalise over the
    // windows that actually ran.
    std::map<std::string, std::map<uint64_t, std::pair<uint64_t, uint64_t>>> fuel;
    uint64_t budget_violations = 0;
};

util::Result<UsageRows, std::string> load_usage(const std::string& out_dir) {
    using R = util::Result<UsageRows, std::string>;
    UsageRows u;

    std::ifstream mf(out_dir + "/isolation_meta.json");
    if (!mf) return R("MissingInput: isolation_meta.json not found in " + out_dir);
    try {
        nlohmann::json meta;
        mf >> meta;
        u.capacity = meta.at("capacity_fuel_per_window").get<uint64_t>();
        const auto& s = meta.at("scenario");
        u.scn.regular_budget_pct = s.at("regular_budget_pct").get<double>();
        u.scn.misbehaving_initial_pct = s.at("misbehaving_initial_pct").get<double>();
        u.scn.saturation_at_us = s.at("saturation_at_us").get<uint64_t>();
        u.scn.metering_on_at_us = s.at("metering_on_at_us").get<uint64_t>();
        u.scn.total_us = s.at("total_us").get<uint64_t>();
        u.scn.window_us = s.at("window_us").get<uint64_t>();
        u.scn.avg_window_us = s.at("avg_window_us").get<uint64_t>();
        u.scn.bootstrap_skip_us = s.at("bootstrap_skip_us").get<uint64_t>();
    } catch (const std::exception& e) {
        return R(std::string("isolation meta: ") + e.what());
    }

    auto rows = read_csv(out_dir + "/isolation_usage.csv",
                         "instance,window_index,t_ms,instructions_used,budget,suspended");
    if (!rows.ok()) return R(rows.error());

    const uint64_t windows_per_avg = u.scn.avg_window_us / u.scn.window_us;
    for (const auto& row : rows.value()) {
        if (row.size() != 6) continue;
        const std::string& inst = row[0];
        const uint64_t window_index = std::stoull(row[1]);
        const uint64_t used = std::stoull(row[3]);
        auto& slot = u.fuel[inst][window_index / windows_per_avg];
        slot.first += used;
        slot.second++;
        if (row[4] != "unlimited") {
            const uint64_t budget = std::stoull(row[4]);
            if (used > budget + 10000) u.budget_violations++;
        }
    }
    return R(std::move(u));
}

} // namespace

util::Result<IsolationCheck, std::string> check_isolation(const std::string& out_dir) {
    using R = util::Result<IsolationCheck, std::string>;
    auto loaded = load_usage(out_dir);
    if (!loaded.ok()) return R(loaded.error());
    const auto& u = loaded.value();
    const auto& scn = u.scn;

    // Unmetered phases measure wall-clock rate: the averaging window always
    // divides by its nominal span. Metered windows carry per-grant usage, so
    // they normalise over the windows that actually ran (whole-VM stalls
    // leave gaps that no scheduler could meter).
    const double nominal_per_aw = double(scn.avg_window_us) / double(scn.window_us);
    auto share_pct = [&](const std::string& inst, uint64_t aw,
                         bool per_grant) -> double {
        auto it = u.fuel.find(inst);
        if (it == u.fuel.end()) return 0.0;
        auto jt = it->second.find(aw);
        if (jt == it->second.end() || jt->second.second == 0) return -1.0; // no data
        const double denom = per_grant ? double(jt->second.second) : nominal_per_aw;
        return 100.0 * double(jt->second.first) / (denom * double(u.capacity));
    };
    // averaging window fully inside [from_us, to_us)
    auto aw_range = [&](uint64_t from_us, uint64_t to_us) {
        const uint64_t first = (from_us + scn.avg_window_us - 1) / scn.avg_window_us;
        const uint64_t last = to_us / scn.avg_window_us; // exclusive
        return std::pair<uint64_t, uint64_t>(first, last);
    };

    IsolationCheck c;

    // Phase 1: mean shares within +-10% (relative) of the intended rates
    {
        const auto [first, last] = aw_range(scn.bootstrap_skip_us, scn.saturation_at_us);
        double reg = 0, mis = 0;
        size_t n = 0;
        for (uint64_t aw = first; aw < last; aw++) {
            const double r = share_pct("regular", aw, false);
            const double m = share_pct("misbehaving", aw, false);
            if (r < 0 || m < 0) continue; // averaging window fully stalled
            reg += r;
            mis += m;
            n++;
        }
        if (n == 0) return R(std::string("phase 1 has no complete averaging windows"));
        c.p1_regular = reg / double(n);
        c.p1_misbehaving = mis / double(n);
        c.phase1_ok =
            std::abs(c.p1_regular - scn.regular_budget_pct) <=
                0.10 * scn.regular_budget_pct &&
            std::abs(c.p1_misbehaving - scn.misbehaving_initial_pct) <=
                0.10 * scn.misbehaving_initial_pct;
        c.avg_windows += n;
    }

    // Phase 2: the regular dApp loses ground in at least one averaging window
    {
        const auto [first, last] = aw_range(scn.saturation_at_us, scn.metering_on_at_us);
        double min_reg = 1e9;
        for (uint64_t aw = first; aw < last; aw++) {
            const double r = share_pct("regular", aw, false);
            if (r >= 0) min_reg = std::min(min_reg, r);
        }
        c.p2_regular_min = min_reg;
        c.phase2_ok = min_reg < c.p1_regular;
    }

    // Phase 3: every averaging window after one settling window within +-5 pp
    {
        const auto [first_raw, last] =
            aw_range(scn.metering_on_at_us, scn.total_us);
        const uint64_t first = first_raw + 1; // settling window
        double worst_reg = 0, worst_mis = 0;
        size_t n = 0;
        for (uint64_t aw = first; aw < last; aw++) {
            const double r = share_pct("regular", aw, true);
            const double m = share_pct("misbehaving", aw, true);
            if (r < 0 || m < 0) continue; // averaging window fully stalled
            worst_reg = std::max(worst_reg, std::abs(r - scn.regular_budget_pct));
            worst_mis = std::max(worst_mis, std::abs(m - scn.misbehaving_initial_pct));
            n++;
        }
        if (n == 0) return R(std::string("phase 3 has no complete averaging windows"));
        c.p3_reg_worst_dev = worst_reg;
        c.p3_mis_worst_dev = worst_mis;
        c.phase3_ok = worst_reg <= 5.0 && worst_mis <= 5.0;
    }

    c.budget_violations = u.budget_violations;
    c.budget_bound_ok = u.budget_violations == 0;
    return R(c);
}

util::Result<bool, std::string> write_shares_dat(const std::string& out_dir) {
    using R = util::Result<bool, std::string>;
    auto loaded = load_usage(out_dir);
    if (!loaded.ok()) return R(loaded.error());
    const auto& u = loaded.value();

    std::ofstream f(out_dir + "/isolation_shares.dat");
    f << "# t_ms regular_share_pct misbehaving_share_pct\n";
    const uint64_t n_aw = u.scn.total_us / u.scn.avg_window_us;
    for (uint64_t aw = 0; aw < n_aw; aw++) {
        auto share = [&](const char* name) {
            auto it = u.fuel.find(name);
            if (it == u.fuel.end()) return 0.0;
            auto jt = it->second.find(aw);
            if (jt == it->second.end() || jt->second.second == 0) return 0.0;
            return 100.0 * double(jt->second.first) /
                   (double(jt->second.second) * double(u.capacity));
        };
        f << aw * u.scn.avg_window_us / 1000 << ' ' << share("regular") << ' '
          << share("misbehaving") << '\n';
    }
    return R(true);
}

std::string isolation_summary(const IsolationCheck& c) {
    std::ostringstream os;
    os << "isolation: phase1 regular=" << c.p1_regular
       << "% misbehaving=" << c.p1_misbehaving << "% -> "
       << (c.phase1_ok ? "PASS" : "FAIL") << "\n";
    os << "isolation: phase2 regular_min=" << c.p2_regular_min << "% (phase1 mean "
       << c.p1_regular << "%) -> " << (c.phase2_ok ? "PASS" : "FAIL") << "\n";
    os << "isolation: phase3 worst deviation regular=" << c.p3_reg_worst_dev
       << "pp misbehaving=" << c.p3_mis_worst_dev << "pp -> "
       << (c.phase3_ok ? "PASS" : "FAIL") << "\n";
    os << "isolation: budget bound violations=" << c.budget_violations << " -> "
       << (c.budget_bound_ok ? "PASS" : "FAIL") << "\n";
    return os.str();
}

} // namespace bench
