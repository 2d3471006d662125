#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <thread>

#include "agent/agent.hpp"
#include "agent/iq_gen.hpp"
#include "e3/codec.hpp"
#include "util/clock.hpp"

using namespace agent;
using sandbox::Conn;
using sandbox::TransportMode;
using sandbox::VirtualHub;

namespace {

ScenarioConfig small_scenario(uint32_t frames = 10, uint32_t period_us = 2000) {
    ScenarioConfig c;
    c.n_prb = 64;
    c.fft_size = 256; // keep unit-test frames light
    c.noise_sigma = 0.0;
    c.indication_period_us = period_us;
    c.duration_us = uint64_t(frames) * period_us;
    c.seed = 5;
    return c;
}

struct AgentFixture {
    VirtualHub hub;
    E3Agent agent;

    explicit AgentFixture(ScenarioConfig scenario, uint16_t port = 9300)
        : agent(AgentConfig{"agent", port, TransportMode::VirtualChannel, &hub,
                            std::move(scenario), true, 100000}) {
        REQUIRE(agent.start());
    }
};

struct Client {
    std::unique_ptr<Conn> conn;
    std::vector<uint8_t> buf;

    explicit Client(VirtualHub& hub, uint16_t port = 9300) {
        auto r = hub.connect("agent", port);
        REQUIRE(r.ok());
        conn = std::move(r.value());
    }

    void send(const e3::E3Message& msg) {
        const auto bytes = e3::encode(msg);
        REQUIRE(conn->write(bytes) == int64_t(bytes.size()));
    }

    // Blocks for the next complete frame; reports end-of-stream as nullopt.
    std::optional<e3::E3Message> recv(uint64_t deadline_us = 2000000) {
        const uint64_t t0 = util::now_us();
        uint8_t chunk[65536];
        for (;;) {
            const size_t fs = e3::frame_size(buf);
            if (fs > 0 && buf.size() >= fs) {
                auto dec = e3::decode(std::span<const uint8_t>(buf.data(), fs));
                buf.erase(buf.begin(), buf.begin() + long(fs));
                REQUIRE(dec.ok());
                return dec.value();
            }
            if (util::now_us() - t0 > deadline_us) return std::nullopt;
            const int64_t n = conn->read_some(chunk);
            if (n > 0) buf.insert(buf.end(), chunk, chunk + n);
            else if (n == 0) return std::nullopt;
            else std::this_thread::sleep_for(std::chrono::microseconds(200));
        }
    }
};

} // namespace

TEST_CASE("setup then subscribe yields OK responses and a fresh sub id") {
    AgentFixture f(small_scenario());
    Client c(f.hub);
    c.send(e3::SetupRequest{1, 0x01});
    auto r1 = c.recv();
    REQUIRE(r1);
    CHECK(std::get<e3::SetupResponse>(*r1) == e3::SetupResponse{1, e3::kStatusOk});

    c.send(e3::SubscriptionRequest{1, e3::ServiceKind::Report, 1000});
    auto r2 = c.recv();
    REQUIRE(r2);
    const auto sub = std::get<e3::SubscriptionResponse>(*r2);
    CHECK(sub.status == e3::kStatusOk);
    CHECK(sub.sub_id == 1);
    f.agent.stop();
}

TEST_CASE("duplicate dapp_id setup is rejected") {
    AgentFixture f(small_scenario());
    Client a(f.hub), b(f.hub);
    a.send(e3::SetupRequest{7, 0x01});
    REQUIRE(a.recv());
    b.send(e3::SetupRequest{7, 0x01});
    auto r = b.recv();
    REQUIRE(r);
    CHECK(std::get<e3::SetupResponse>(*r).status == e3::kStatusRejected);
    f.agent.stop();
}

TEST_CASE("control before any setup gets an error indication") {
    AgentFixture f(small_scenario());
    Client c(f.hub);
    c.send(e3::Control{9, 0, e3::PrbBlocklist::empty(64)});
    auto r = c.recv();
    REQUIRE(r);
    CHECK(std::get<e3::ErrorIndication>(*r).code == e3::kErrUnknownRequest);
    f.agent.stop();
}

TEST_CASE("insert, policy and query subscriptions answer Unsupported") {
    AgentFixture f(small_scenario());
    Client c(f.hub);
    c.send(e3::SetupRequest{2, 0xFF});
    REQUIRE(c.recv());
    for (const auto kind :
         {e3::ServiceKind::Insert, e3::ServiceKind::Policy, e3::ServiceKind::Query}) {
        c.send(e3::SubscriptionRequest{2, kind, 1000});
        auto r = c.recv();
        REQUIRE(r);
        CHECK(std::get<e3::ErrorIndication>(*r).code == e3::kErrUnsupported);
    }
    f.agent.stop();
}

TEST_CASE("mismatched blocklist size is refused and not applied") {
    AgentFixture f(small_scenario());
    Client c(f.hub);
    c.send(e3::SetupRequest{3, 0x01});
    REQUIRE(c.recv());
    c.send(e3::Control{3, 0, e3::PrbBlocklist::empty(32)});
    auto r = c.recv();
    REQUIRE(r);
    CHECK(std::get<e3::ErrorIndication>(*r).code == agent::kErrMismatchedPrbCount);
    CHECK(f.agent.scheduler_state().applied_count == 0);
    f.agent.stop();
}

TEST_CASE("streaming delivers sequenced indications and pairs controls into loop records") {
    AgentFixture f(small_scenario(10, 2000));
    Client c(f.hub);
    c.send(e3::SetupRequest{1, 0x01});
    REQUIRE(c.recv());
    c.send(e3::SubscriptionRequest{1, e3::ServiceKind::Report, 2000});
    REQUIRE(c.recv());

    uint32_t expect_seq = 0;
    for (;;) {
        auto msg = c.recv(1000000);
        if (!msg) break;
        auto* ind = std::get_if<e3::Indication>(&*msg);
        REQUIRE(ind != nullptr);
        CHECK(ind->seq == expect_seq);
        CHECK(ind->frame.samples.size() == 256);
        expect_seq++;
        // answer with a blocklist echoing the seq
        auto bl = e3::PrbBlocklist::empty(64);
        bl.set(uint16_t(ind->seq % 64));
        c.send(e3::Control{1, ind->seq, bl});
    }
    CHECK(expect_seq == 10);

    REQUIRE(f.agent.wait_done(2000000));
    const auto records = f.agent.loop_records();
    REQUIRE(records.size() == 10);
    std::set<uint32_t> seqs;
    for (const auto& r : records) {
        CHECK(r.rtt_us == r.t_recv_us - r.t_sent_us);
        seqs.insert(r.seq);
    }
    CHECK(seqs.size() == 10); // exactly one record per answered seq
    const auto st = f.agent.scheduler_state();
    CHECK(st.applied_count == 10);
    CHECK(st.last_control_seq == 9);
    CHECK(st.current_blocklist.test(9));
    f.agent.stop();
}

TEST_CASE("indication inter-send jitter stays under half the period at p99") {
    // measured at the latency scenario's period; the bound scales with it
    constexpr double kPeriodUs = 10000.0;
    AgentFixture f(small_scenario(300, uint32_t(kPeriodUs)));
    Client c(f.hub);
    c.send(e3::SetupRequest{1, 0x01});
    REQUIRE(c.recv());
    c.send(e3::SubscriptionRequest{1, e3::ServiceKind::Report, uint32_t(kPeriodUs)});
    REQUIRE(c.recv());
    int got = 0;
    while (auto msg = c.recv(1000000)) {
        if (std::holds_alternative<e3::Indication>(*msg)) got++;
    }
    REQUIRE(got == 300);

    const auto times = f.agent.indication_send_times();
    REQUIRE(times.size() == 300);
    std::vector<double> jitter;
    for (size_t i = 1; i < times.size(); i++)
        jitter.push_back(std::abs(double(times[i] - times[i - 1]) - kPeriodUs));
    std::sort(jitter.begin(), jitter.end());
    const double p99 = jitter[size_t(double(jitter.size() - 1) * 0.99)];
    CHECK(p99 < kPeriodUs / 2);
    f.agent.stop();
}
