#include "bench/latency.hpp"

#include <sstream>
#include <thread>

#include "agent/agent.hpp"
#include "dapp/native_env.hpp"
#include "sandbox/host.hpp"
#include "util/clock.hpp"

namespace bench {

using sandbox::TransportMode;
using sandbox::VirtualHub;

agent::ScenarioConfig default_latency_scenario(uint64_t seed, uint32_t loops,
                                               uint32_t period_us) {
    agent::ScenarioConfig c;
    c.n_prb = 64;
    c.fft_size = 1024;
    c.noise_sigma = 0.05;
    const double amp = agent::ScenarioConfig::amplitude_for_snr_db(20.0, c.noise_sigma);
    c.incumbents.push_back(agent::Incumbent{3, amp, 0, UINT64_MAX});
    c.incumbents.push_back(agent::Incumbent{40, amp, 0, UINT64_MAX});
    c.indication_period_us = period_us;
    c.duration_us = uint64_t(loops) * period_us;
    c.seed = seed;
    return c;
}

namespace {

struct StageRow {
    uint32_t seq;
    uint64_t decode_us, process_us, encode_us, transmit_us, cum_us;
};

// Collects the dApp's buffered stage log over its dedicated connection.
struct StageSink {
    std::unique_ptr<sandbox::Listener> listener;
    std::thread thread;
    std::string text;

    explicit StageSink(VirtualHub& hub) {
        auto r = hub.listen("stagesink", 9400);
        if (r.ok()) listener = std::move(r.value());
        thread = std::thread([this] {
            auto conn = listener->accept(30000000);
            if (!conn) return;
            uint8_t buf[65536];
            for (;;) {
                const int64_t n = conn->read(buf);
                if (n <= 0) break;
                text.append(reinterpret_cast<char*>(buf), size_t(n));
            }
        });
    }

    std::string take() {
        if (thread.joinable()) thread.join();
        return std::move(text);
    }
    ~StageSink() {
        if (listener) listener->close();
        if (thread.joinable()) thread.join();
    }
};

std::vector<StageRow> parse_stage_rows(const std::string& text) {
    std::vector<StageRow> rows;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        const auto f = split_csv_line(line);
        if (f.size() != 6) continue;
        StageRow r;
        r.seq = uint32_t(std::stoul(f[0]));
        r.decode_us = std::stoull(f[1]);
        r.process_us = std::stoull(f[2]);
        r.encode_us = std::stoull(f[3]);
        r.transmit_us = std::stoull(f[4]);
        r.cum_us = std::stoull(f[5]);
        rows.push_back(r);
    }
    return rows;
}

std::string dapp_config_text(const agent::ScenarioConfig& scn) {
    return "agent_host=agent\nagent_port=9300\ndapp_id=1\nfft_size=" +
           std::to_string(scn.fft_size) + "\nn_prb=" + std::to_string(scn.n_prb) +
           "\nperiod_us=" + std::to_string(scn.indication_period_us) +
           "\nthreshold_db=6.0\nstage_log=1\nstage_host=stagesink\nstage_port=9400\n";
}

} // namespace

util::Result<LatencyResult, std::string> run_latency(const LatencyOptions& opts) {
    using R = util::Result<LatencyResult, std::string>;
    OutDir out(opts.out_dir);
    LatencyResult result;

    auto stages_csv = out.open("latency_stages.csv");
    stages_csv << "arm,repeat,seq,decode_us,process_us,encode_us,transmit_us,cumulative_us\n";
    result.stages_csv = out.path("latency_stages.csv");

    // per arm, aggregated over repeats
    std::map<Arm, std::vector<StageRow>> all_rows;
    std::map<Arm, std::vector<uint64_t>> all_rtts;

    for (uint32_t rep = 0; rep < opts.repeats; rep++) {
        for (const Arm arm : opts.arms) {
            const auto scn = default_latency_scenario(opts.seed, opts.loops, opts.period_us);
            VirtualHub hub;
            agent::E3Agent e3agent(agent::AgentConfig{
                "agent", 9300, TransportMode::VirtualChannel, &hub, scn, false, 500000});
            if (!e3agent.start()) return R(std::string("agent start failed"));
            StageSink sink(hub);

            int32_t rc = -1;
            if (arm == Arm::Native) {
                std::thread t([&] {
                    rc = nativearm::run_dapp(TransportMode::VirtualChannel, &hub,
                                             dapp_config_text(scn));
                });
                t.join();
            } else {
                sandbox::Host host(sandbox::Host::Options{
                    TransportMode::VirtualChannel, &hub, 16, 1024, 10000, -1});
                sandbox::Manifest m;
                m.name = "sensing";
                m.bytecode_path = opts.guests_dir + "/sensing_dapp.wasm";
                m.allowed_endpoints = {{"agent", 9300}, {"stagesink", 9400}};
                auto h = host.load_module(m);
                if (!h.ok()) return R("load: " + h.error().detail);
                auto inst = host.spawn_instance(h.value(), sandbox::kUnlimitedFuel);
                if (!inst.ok()) return R(std::string("spawn failed"));
                host.scheduler().start();
                if (!inst.value()->write_config(dapp_config_text(scn)))
                    return R(std::string("config write failed"));
                if (!inst.value()->start()) return R(std::string("guest start failed"));
                inst.value()->join();
                if (inst.value()->state() != sandbox::InstanceState::Exited)
                    return R(std::string("sandboxed dApp trapped"));
                rc = inst.value()->exit_code();
            }
            if (rc != 0)
                return R("dApp exited with code " + std::to_string(rc));

            e3agent.wait_done(5000000);
            const auto rows = parse_stage_rows(sink.take());
            if (rows.size() < opts.loops)
                return R("InsufficientLoops: " + std::string(arm_name(arm)) + " answered " +
                         std::to_string(rows.size()) + " of " + std::to_string(opts.loops));

            for (const auto& r : rows)
                stages_csv << arm_name(arm) << ',' << rep << ',' << r.seq << ','
                           << r.decode_us << ',' << r.process_us << ',' << r.encode_us
                           << ',' << r.transmit_us << ',' << r.cum_us << '\n';
            auto& dst = all_rows[arm];
            dst.insert(dst.end(), rows.begin(), rows.end());

            const auto records = e3agent.loop_records();
            auto loop_csv = out.open("loop_log_" + std::string(arm_name(arm)) +
                                     (opts.repeats > 1 ? "_r" + std::to_string(rep) : "") +
                                     ".csv");
            loop_csv << "seq,t_sent_us,t_recv_us,rtt_us\n";
            for (const auto& lr : records) {
                loop_csv << lr.seq << ',' << lr.t_sent_us << ',' << lr.t_recv_us << ','
                         << lr.rtt_us << '\n';
                all_rtts[arm].push_back(lr.rtt_us);
            }
            e3agent.stop();
        }
    }

    for (const Arm arm : opts.arms) {
        const auto& rows = all_rows[arm];
        ArmStats s;
        s.arm = arm;
        s.loops = rows.size();
        auto collect = [&](auto field) {
            std::vector<uint64_t> v;
            v.reserve(rows.size());
            for (const auto& r : rows) v.push_back(field(r));
            return v;
        };
        const auto cum = collect([](const StageRow& r) { return r.cum_us; });
        s.median_decode_us = percentile(collect([](const StageRow& r) { return r.decode_us; }), 50);
        s.median_process_us = percentile(collect([](const StageRow& r) { return r.process_us; }), 50);
        s.median_encode_us = percentile(collect([](const StageRow& r) { return r.encode_us; }), 50);
        s.median_transmit_us = percentile(collect([](const StageRow& r) { return r.transmit_us; }), 50);
        s.median_cum_us = percentile(cum, 50);
        s.p90_cum_us = percentile(cum, 90);
        s.p99_cum_us = percentile(cum, 99);
        s.median_rtt_us = percentile(all_rtts[arm], 50);
        result.arms.push_back(s);
    }

    const ArmStats* native = nullptr;
    const ArmStats* sandboxed = nullptr;
    for (const auto& s : result.arms) {
        if (s.arm == Arm::Native) native = &s;
        if (s.arm == Arm::Sandboxed) sandboxed = &s;
    }
    if (sandboxed) result.rt_bound_ok = sandboxed->median_cum_us < 10000.0;
    if (native && sandboxed) {
        result.ordering_ok = native->median_cum_us <= sandboxed->median_cum_us;
        result.sandbox_over_native = sandboxed->median_cum_us / native->median_cum_us;
    }
    return R(std::move(result));
}

std::string latency_summary(const LatencyResult& r) {
    std::ostringstream os;
    for (const auto& s : r.arms) {
        os << "latency[" << arm_name(s.arm) << "]: loops=" << s.loops
           << " median decode=" << s.median_decode_us << "us process="
           << s.median_process_us << "us encode=" << s.median_encode_us
           << "us transmit=" << s.median_transmit_us << "us cumulative="
           << s.median_cum_us << "us (p90=" << s.p90_cum_us << ", p99=" << s.p99_cum_us
           << ") agent rtt=" << s.median_rtt_us << "us\n";
    }
    if (r.sandbox_over_native > 0) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f", r.sandbox_over_native);
        os << "latency: sandbox/native median cumulative ratio = " << buf << "\n";
    }
    os << "latency: real-time bound (<10ms sandboxed median) -> "
       << (r.rt_bound_ok ? "PASS" : "FAIL") << "\n";
    os << "latency: ordering (native <= sandboxed) -> "
       << (r.ordering_ok ? "PASS" : "FAIL") << "\n";
    return os.str();
}

} // namespace bench
