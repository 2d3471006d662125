// Benchmark harness wiring the host, agent and dApp builds into the three
// experiments: isolation (windowed gas budgets vs a misbehaving dApp),
// control-loop latency (native vs sandboxed arm), and computational
// footprint. Exit code 0 iff every acceptance predicate of the invoked
// scenario passes.

#include <unistd.h>

#include <cstdlib>
#include <iostream>
#include <limits.h>

#include "CLI11.hpp"
#include "bench/footprint.hpp"
#include "bench/isolation.hpp"
#include "bench/latency.hpp"
#include "bench/report.hpp"

namespace {

std::string self_exe_path() {
    char buf[PATH_MAX];
    const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
    if (n <= 0) return "bench";
    buf[n] = 0;
    return buf;
}

std::string default_guests_dir() {
    // guests/ next to the binary (the build tree layout)
    const auto self = std::filesystem::path(self_exe_path());
    const auto beside = self.parent_path().parent_path() / "guests";
    if (std::filesystem::exists(beside)) return beside.string();
    return "guests";
}

uint64_t seed_from_env(uint64_t fallback) {
    if (const char* s = std::getenv("BENCH_SEED")) return std::strtoull(s, nullptr, 10);
    return fallback;
}

util::Result<std::vector<bench::Arm>, std::string> parse_arms(const std::string& csv) {
    using R = util::Result<std::vector<bench::Arm>, std::string>;
    std::vector<bench::Arm> arms;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        auto a = bench::arm_from_string(tok);
        if (!a.ok()) return R(a.error());
        arms.push_back(a.value());
    }
    if (arms.empty()) return R(std::string("no arms given"));
    return R(std::move(arms));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"RAN dApp sandbox benchmark harness"};
    app.require_subcommand(1);

    std::string out_dir = "bench-out";
    std::string guests_dir = default_guests_dir();
    app.add_option("--guests-dir", guests_dir, "directory with compiled guest modules")
        ->capture_default_str();

    // isolation
    auto* iso = app.add_subcommand("isolation", "two-dApp noisy-neighbor experiment");
    std::string iso_scenario_path;
    iso->add_option("--scenario", iso_scenario_path, "scenario JSON (defaults built in)");
    iso->add_option("--out", out_dir, "output directory")->capture_default_str();

    // latency
    auto* lat = app.add_subcommand("latency", "control-loop latency per arm");
    std::string arms_csv = "native,sandbox";
    uint32_t loops = 1000;
    uint32_t period_us = 5000;
    uint32_t repeats = 1;
    lat->add_option("--arms", arms_csv, "comma list: native,sandbox")->capture_default_str();
    lat->add_option("--loops", loops, "answered loops required per arm")
        ->capture_default_str();
    lat->add_option("--period-us", period_us, "indication period")->capture_default_str();
    lat->add_option("--repeats", repeats, "independent repetitions")->capture_default_str();
    lat->add_option("--out", out_dir, "output directory")->capture_default_str();

    // footprint
    auto* fp = app.add_subcommand("footprint", "CPU time and peak RSS per arm");
    double duration_s = 5.0;
    fp->add_option("--arms", arms_csv, "comma list: native,sandbox")->capture_default_str();
    fp->add_option("--duration-s", duration_s, "run duration per arm")
        ->capture_default_str();
    fp->add_option("--repeats", repeats, "independent repetitions")->capture_default_str();
    fp->add_option("--out", out_dir, "output directory")->capture_default_str();

    // report
    auto* rep = app.add_subcommand("report", "rebuild summary from CSVs");
    std::string in_dir = "bench-out";
    rep->add_option("--in", in_dir, "directory with scenario CSVs")->capture_default_str();

    // hidden child for footprint measurements
    auto* child = app.add_subcommand("footprint-child");
    child->group(""); // hidden
    std::string child_arm = "native";
    uint64_t child_duration_us = 5000000;
    uint64_t child_seed = 42;
    uint32_t child_period_us = 5000;
    child->add_option("--arm", child_arm);
    child->add_option("--duration-us", child_duration_us);
    child->add_option("--seed", child_seed);
    child->add_option("--period-us", child_period_us);
    child->add_option("--guests-dir", guests_dir);

    CLI11_PARSE(app, argc, argv);

    if (child->parsed()) {
        auto arm = bench::arm_from_string(child_arm);
        if (!arm.ok()) return 2;
        return bench::footprint_child(arm.value(), child_duration_us, child_seed,
                                      child_period_us, guests_dir);
    }

    if (iso->parsed()) {
        bench::IsolationScenario scn;
        if (!iso_scenario_path.empty()) {
            auto s = bench::isolation_scenario_from_json_file(iso_scenario_path);
            if (!s.ok()) {
                std::cerr << "error: " << s.error() << "\n";
                return 2;
            }
            scn = s.value();
        }
        auto run = bench::run_isolation(scn, guests_dir, out_dir);
        if (!run.ok()) {
            std::cerr << "error: " << run.error() << "\n";
            return 2;
        }
        std::cout << "capacity: " << run.value().capacity_fuel_per_window
                  << " fuel/window, " << run.value().fuel_per_iteration
                  << " fuel/iteration\n";
        auto check = bench::check_isolation(out_dir);
        if (!check.ok()) {
            std::cerr << "error: " << check.error() << "\n";
            return 2;
        }
        std::cout << bench::isolation_summary(check.value());
        return check.value().all_ok() ? 0 : 1;
    }

    if (lat->parsed()) {
        auto arms = parse_arms(arms_csv);
        if (!arms.ok()) {
            std::cerr << "error: " << arms.error() << "\n";
            return 2;
        }
        bench::LatencyOptions opts;
        opts.arms = arms.value();
        opts.loops = loops;
        opts.period_us = period_us;
        opts.repeats = repeats;
        opts.seed = seed_from_env(42);
        opts.guests_dir = guests_dir;
        opts.out_dir = out_dir;
        auto run = bench::run_latency(opts);
        if (!run.ok()) {
            std::cerr << "error: " << run.error() << "\n";
            return 2;
        }
        std::cout << bench::latency_summary(run.value());
        return run.value().rt_bound_ok && run.value().ordering_ok ? 0 : 1;
    }

    if (fp->parsed()) {
        auto arms = parse_arms(arms_csv);
        if (!arms.ok()) {
            std::cerr << "error: " << arms.error() << "\n";
            return 2;
        }
        bench::FootprintOptions opts;
        opts.arms = arms.value();
        opts.duration_us = uint64_t(duration_s * 1e6);
        opts.seed = seed_from_env(42);
        opts.repeats = repeats;
        opts.guests_dir = guests_dir;
        opts.out_dir = out_dir;
        opts.self_exe = self_exe_path();
        auto run = bench::run_footprint(opts);
        if (!run.ok()) {
            std::cerr << "error: " << run.error() << "\n";
            return 2;
        }
        std::cout << bench::footprint_summary(run.value());
        return run.value().cpu_positive && run.value().mem_ratio_above_one ? 0 : 1;
    }

    if (rep->parsed()) {
        auto r = bench::build_report(in_dir);
        if (!r.ok()) {
            std::cerr << "error: " << r.error() << "\n";
            return 2;
        }
        std::cout << r.value();
        return r.value().find("FAIL") == std::string::npos ? 0 : 1;
    }
    return 2;
}
