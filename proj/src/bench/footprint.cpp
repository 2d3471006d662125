#include "bench/footprint.hpp"

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <sstream>
#include <thread>

#include "agent/agent.hpp"
#include "bench/latency.hpp"
#include "dapp/native_env.hpp"
#include "sandbox/host.hpp"

namespace bench {

using sandbox::TransportMode;
using sandbox::VirtualHub;

int footprint_child(Arm arm, uint64_t duration_us, uint64_t seed, uint32_t period_us,
                    const std::string& guests_dir) {
    const uint32_t loops = uint32_t(duration_us / period_us);
    const auto scn = default_latency_scenario(seed, loops, period_us);
    VirtualHub hub;
    agent::E3Agent e3agent(agent::AgentConfig{"agent", 9300, TransportMode::VirtualChannel,
                                              &hub, scn, false, 500000});
    if (!e3agent.start()) return 10;

    const std::string config =
        "agent_host=agent\nagent_port=9300\ndapp_id=1\nfft_size=" +
        std::to_string(scn.fft_size) + "\nn_prb=" + std::to_string(scn.n_prb) +
        "\nperiod_us=" + std::to_string(period_us) + "\nthreshold_db=6.0\n";

    int32_t rc = -1;
    if (arm == Arm::Native) {
        rc = nativearm::run_dapp(TransportMode::VirtualChannel, &hub, config);
    } else {
        sandbox::Host host(sandbox::Host::Options{TransportMode::VirtualChannel, &hub,
                                                  16, 1024, 10000, -1});
        sandbox::Manifest m;
        m.name = "sensing";
        m.bytecode_path = guests_dir + "/sensing_dapp.wasm";
        m.allowed_endpoints = {{"agent", 9300}};
        auto h = host.load_module(m);
        if (!h.ok()) return 11;
        auto inst = host.spawn_instance(h.value(), sandbox::kUnlimitedFuel);
        if (!inst.ok()) return 12;
        host.scheduler().start();
        if (!inst.value()->write_config(config)) return 13;
        if (!inst.value()->start()) return 14;
        inst.value()->join();
        rc = inst.value()->state() == sandbox::InstanceState::Exited
                 ? inst.value()->exit_code()
                 : 15;
    }
    e3agent.wait_done(2000000);
    e3agent.stop();
    return rc == 0 ? 0 : 16;
}

util::Result<FootprintResult, std::string> run_footprint(const FootprintOptions& opts) {
    using R = util::Result<FootprintResult, std::string>;
    OutDir out(opts.out_dir);
    FootprintResult result;

    for (uint32_t rep = 0; rep < opts.repeats; rep++) {
        for (const Arm arm : opts.arms) {
            const pid_t pid = ::fork();
            if (pid < 0) return R(std::string("fork failed"));
            if (pid == 0) {
                ::execl(opts.self_exe.c_str(), opts.self_exe.c_str(), "footprint-child",
                        "--arm", arm_name(arm), "--duration-us",
                        std::to_string(opts.duration_us).c_str(), "--seed",
                        std::to_string(opts.seed).c_str(), "--period-us",
                        std::to_string(opts.period_us).c_str(), "--guests-dir",
                        opts.guests_dir.c_str(), (char*)nullptr);
                _exit(127);
            }
            int status = 0;
            struct rusage ru;
            if (::wait4(pid, &status, 0, &ru) != pid)
                return R(std::string("wait4 failed"));
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
                return R("footprint child for " + std::string(arm_name(arm)) +
                         " exited with status " + std::to_string(WEXITSTATUS(status)));
            if (ru.ru_maxrss <= 0)
                return R(std::string("UnsupportedPlatform: peak RSS unavailable"));

            FootprintRecord rec;
            rec.arm = arm;
            rec.cpu_time_ms = double(ru.ru_utime.tv_sec + ru.ru_stime.tv_sec) * 1000.0 +
                              double(ru.ru_utime.tv_usec + ru.ru_stime.tv_usec) / 1000.0;
            rec.peak_rss_bytes = uint64_t(ru.ru_maxrss) * 1024;
            result.records.push_back(rec);
        }
    }

    auto median_of = [&](Arm arm, auto field) {
        std::vector<double> v;
        for (const auto& r : result.records)
            if (r.arm == arm) v.push_back(field(r));
        return percentile(v, 50);
    };
    const double cpu_native = median_of(Arm::Native, [](const FootprintRecord& r) {
        return r.cpu_time_ms;
    });
    const double cpu_sandbox = median_of(Arm::Sandboxed, [](const FootprintRecord& r) {
        return r.cpu_time_ms;
    });
    const double mem_native = median_of(Arm::Native, [](const FootprintRecord& r) {
        return double(r.peak_rss_bytes);
    });
    const double mem_sandbox = median_of(Arm::Sandboxed, [](const FootprintRecord& r) {
        return double(r.peak_rss_bytes);
    });

    for (const auto& r : result.records)
        if (r.cpu_time_ms <= 0.0) result.cpu_positive = false;
    if (cpu_native > 0 && cpu_sandbox > 0) result.cpu_ratio = cpu_sandbox / cpu_native;
    if (mem_native > 0 && mem_sandbox > 0) result.mem_ratio = mem_sandbox / mem_native;
    if (mem_sandbox > 0) result.mem_ratio_above_one = result.mem_ratio > 1.0;

    result.csv_path = out.path("footprint.csv");
    auto f = out.open("footprint.csv");
    f << "arm,cpu_time_ms,peak_rss_bytes\n";
    for (const auto& r : result.records)
        f << arm_name(r.arm) << ',' << r.cpu_time_ms << ',' << r.peak_rss_bytes << '\n';
    return R(std::move(result));
}

std::string footprint_summary(const FootprintResult& r) {
    std::ostringstream os;
    for (const auto& rec : r.records) {
        os << "footprint[" << arm_name(rec.arm) << "]: cpu_time_ms=" << rec.cpu_time_ms
           << " peak_rss_bytes=" << rec.peak_rss_bytes << "\n";
    }
    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "footprint: sandbox/native ratios cpu=%.2f mem=%.2f\n", r.cpu_ratio,
                  r.mem_ratio);
    os << buf;
    os << "footprint: cpu_time > 0 for all records -> "
       << (r.cpu_positive ? "PASS" : "FAIL") << "\n";
    os << "footprint: sandbox memory ratio > 1 -> "
       << (r.mem_ratio_above_one ? "PASS" : "FAIL") << "\n";
    return os.str();
}

} // namespace bench
