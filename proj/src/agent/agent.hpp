#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "agent/scenario.hpp"
#include "e3/message.hpp"
#include "sandbox/channel.hpp"
#include "sandbox/instance.hpp"

// Simulated RAN-side E3 agent: accepts registrations and Report subscriptions,
// streams seeded synthetic I/Q indications, applies PRB-blocklist controls to
// a simulated scheduler and records per-loop round-trip timing.

namespace agent {

struct Subscription {
    uint32_t sub_id = 0;
    uint32_t dapp_id = 0;
    e3::ServiceKind service = e3::ServiceKind::Report;
    uint32_t period_us = 0;
    uint32_t next_seq = 0;
};

struct LoopRecord {
    uint32_t seq = 0;
    uint64_t t_sent_us = 0;
    uint64_t t_recv_us = 0;
    uint64_t rtt_us = 0;
};

struct SchedulerState {
    e3::PrbBlocklist current_blocklist;
    uint32_t last_control_seq = 0;
    uint64_t applied_count = 0;
};

// ErrorIndication code for a blocklist whose n_prb differs from the scenario.
inline constexpr uint8_t kErrMismatchedPrbCount = 3;

struct AgentConfig {
    std::string listen_host = "agent";
    uint16_t listen_port = 9300;
    sandbox::TransportMode transport = sandbox::TransportMode::VirtualChannel;
    sandbox::VirtualHub* hub = nullptr;
    ScenarioConfig scenario;
    bool record_control_frames = false; // keep raw control frames (parity checks)
    uint64_t close_grace_us = 200000;   // wait for trailing controls before closing
};

class E3Agent {
public:
    explicit E3Agent(AgentConfig cfg);
    ~E3Agent();

    E3Agent(const E3Agent&) = delete;
    E3Agent& operator=(const E3Agent&) = delete;

    bool start();
    void stop();

    // True once every armed subscription has streamed its full scenario and
    // its connection was closed. Times out otherwise.
    bool wait_done(uint64_t timeout_us);

    struct Stats {
        uint64_t indications_sent = 0;
        uint64_t controls_applied = 0;
        uint64_t setups_ok = 0;
        uint64_t setups_rejected = 0;
        uint64_t errors_sent = 0;
        uint64_t decode_errors = 0;
    };

    Stats stats() const;
    SchedulerState scheduler_state() const;
    std::vector<LoopRecord> loop_records() const;
    std::vector<uint64_t> indication_send_times() const;
    std::vector<std::vector<uint8_t>> control_frames() const;

private:
    struct ConnState {
        std::unique_ptr<sandbox::Conn> conn;
        std::vector<uint8_t> buf;
        bool open = true;
    };

    struct ActiveStream {
        Subscription sub;
        size_t conn_index = 0;
        uint64_t next_send_us = 0;
        uint64_t sent = 0;
        uint64_t total = 0;
        uint64_t answered = 0;
        bool finished = false;
        bool closed = false;
        uint64_t finish_deadline_us = 0;
        std::map<uint32_t, uint64_t> t_sent; // seq -> send timestamp
    };

    void loop();
    void drain_reads();
    void handle_frame(std::span<const uint8_t> frame, size_t conn_index);
    void send_reply(size_t conn_index, const e3::E3Message& msg);
    void send_due_indications(uint64_t now);
    void maybe_close_finished(uint64_t now);
    bool all_done() const;

    AgentConfig cfg_;
    std::unique_ptr<sandbox::Listener> listener_;
    std::vector<std::unique_ptr<ConnState>> conns_;
    std::vector<uint32_t> registered_;
    std::vector<ActiveStream> streams_;
    uint32_t next_sub_id_ = 1;

    mutable std::mutex mu_;
    Stats stats_;
    SchedulerState sched_;
    std::vector<LoopRecord> records_;
    std::vector<uint64_t> send_times_;
    std::vector<std::vector<uint8_t>> control_frames_;

    std::atomic<bool> stop_{false};
    std::atomic<bool> done_{false};
    std::condition_variable done_cv_;
    std::thread thread_;
};

} // namespace agent
