#include "agent/agent.hpp"

#include <poll.h>

#include <algorithm>
#include <cstring>

#include "agent/iq_gen.hpp"
#include "e3/codec.hpp"
#include "sandbox/net_errno.hpp"
#include "util/clock.hpp"

namespace agent {

using sandbox::TransportMode;

E3Agent::E3Agent(AgentConfig cfg) : cfg_(std::move(cfg)) {
    sched_.current_blocklist = e3::PrbBlocklist::empty(cfg_.scenario.n_prb);
}

E3Agent::~E3Agent() { stop(); }

bool E3Agent::start() {
    if (cfg_.transport == TransportMode::VirtualChannel) {
        auto r = cfg_.hub->listen(cfg_.listen_host, cfg_.listen_port);
        if (!r.ok()) return false;
        listener_ = std::move(r.value());
    } else {
        auto r = sandbox::tcp_listen(cfg_.listen_host, cfg_.listen_port);
        if (!r.ok()) return false;
        listener_ = std::move(r.value());
    }
    thread_ = std::thread([this] { loop(); });
    return true;
}

void E3Agent::stop() {
    if (!thread_.joinable()) return;
    stop_.store(true);
    if (cfg_.hub) cfg_.hub->bump();
    if (listener_) listener_->close();
    thread_.join();
    for (auto& c : conns_)
        if (c->conn) c->conn->close();
}

bool E3Agent::wait_done(uint64_t timeout_us) {
    std::mutex m;
    std::unique_lock lk(m);
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::microseconds(timeout_us);
    while (!done_.load()) {
        if (done_cv_.wait_until(lk, deadline) == std::cv_status::timeout)
            return done_.load();
    }
    return true;
}

E3Agent::Stats E3Agent::stats() const {
    std::lock_guard lk(mu_);
    return stats_;
}

SchedulerState E3Agent::scheduler_state() const {
    std::lock_guard lk(mu_);
    return sched_;
}

std::vector<LoopRecord> E3Agent::loop_records() const {
    std::lock_guard lk(mu_);
    return records_;
}

std::vector<uint64_t> E3Agent::indication_send_times() const {
    std::lock_guard lk(mu_);
    return send_times_;
}

std::vector<std::vector<uint8_t>> E3Agent::control_frames() const {
    std::lock_guard lk(mu_);
    return control_frames_;
}

void E3Agent::send_reply(size_t conn_index, const e3::E3Message& msg) {
    const auto bytes = e3::encode(msg);
    conns_[conn_index]->conn->write(bytes);
}

void E3Agent::handle_frame(std::span<const uint8_t> frame, size_t conn_index) {
    auto decoded = e3::decode(frame);
    if (!decoded.ok()) {
        {
            std::lock_guard lk(mu_);
            stats_.decode_errors++;
            stats_.errors_sent++;
        }
        send_reply(conn_index, e3::ErrorIndication{e3::kErrUnknownRequest});
        return;
    }
    const uint64_t now = util::now_us();
    auto& msg = decoded.value();

    if (auto* setup = std::get_if<e3::SetupRequest>(&msg)) {
        const bool dup =
            std::find(registered_.begin(), registered_.end(), setup->dapp_id) !=
            registered_.end();
        if (dup) {
            std::lock_guard lk(mu_);
            stats_.setups_rejected++;
        } else {
            registered_.push_back(setup->dapp_id);
            std::lock_guard lk(mu_);
            stats_.setups_ok++;
        }
        send_reply(conn_index, e3::SetupResponse{setup->dapp_id,
                                                 dup ? e3::kStatusRejected : e3::kStatusOk});
        return;
    }

    if (auto* sub = std::get_if<e3::SubscriptionRequest>(&msg)) {
        const bool known =
            std::find(registered_.begin(), registered_.end(), sub->dapp_id) !=
            registered_.end();
        if (!known) {
            {
                std::lock_guard lk(mu_);
                stats_.errors_sent++;
            }
            send_reply(conn_index, e3::ErrorIndication{e3::kErrUnknownRequest});
            return;
        }
        if (sub->service != e3::ServiceKind::Report) {
            {
                std::lock_guard lk(mu_);
                stats_.errors_sent++;
            }
            send_reply(conn_index, e3::ErrorIndication{e3::kErrUnsupported});
            return;
        }
        ActiveStream s;
        s.sub.sub_id = next_sub_id_++;
        s.sub.dapp_id = sub->dapp_id;
        s.sub.service = sub->service;
        s.sub.period_us = std::max<uint32_t>(sub->period_us, 100);
        s.conn_index = conn_index;
        s.next_send_us = now + s.sub.period_us;
        s.total = std::max<uint64_t>(cfg_.scenario.duration_us / s.sub.period_us, 1);
        streams_.push_back(std::move(s));
        send_reply(conn_index,
                   e3::SubscriptionResponse{streams_.back().sub.sub_id, e3::kStatusOk});
        return;
    }

    if (auto* ctl = std::get_if<e3::Control>(&msg)) {
        const bool known =
            std::find(registered_.begin(), registered_.end(), ctl->dapp_id) !=
            registered_.end();
        if (!known) {
            {
                std::lock_guard lk(mu_);
                stats_.errors_sent++;
            }
            send_reply(conn_index, e3::ErrorIndication{e3::kErrUnknownRequest});
            return;
        }
        if (ctl->blocklist.n_prb != cfg_.scenario.n_prb) {
            {
                std::lock_guard lk(mu_);
                stats_.errors_sent++;
            }
            send_reply(conn_index, e3::ErrorIndication{kErrMismatchedPrbCount});
            return;
        }
        // apply_control: atomic blocklist replacement + loop record
        std::lock_guard lk(mu_);
        sched_.current_blocklist = ctl->blocklist;
        sched_.last_control_seq = ctl->seq;
        sched_.applied_count++;
        stats_.controls_applied++;
        if (cfg_.record_control_frames)
            control_frames_.emplace_back(frame.begin(), frame.end());
        for (auto& s : streams_) {
            if (s.sub.dapp_id != ctl->dapp_id) continue;
            auto it = s.t_sent.find(ctl->seq);
            if (it != s.t_sent.end()) {
                records_.push_back(LoopRecord{ctl->seq, it->second, now, now - it->second});
                s.t_sent.erase(it);
                s.answered++;
            }
        }
        return;
    }

    // Indication / responses / error arriving at the agent are not part of
    // the server-side protocol surface.
    {
        std::lock_guard lk(mu_);
        stats_.errors_sent++;
    }
    send_reply(conn_index, e3::ErrorIndication{e3::kErrUnknownRequest});
}

void E3Agent::drain_reads() {
    uint8_t chunk[65536];
    for (size_t ci = 0; ci < conns_.size(); ci++) {
        auto& c = *conns_[ci];
        if (!c.open) continue;
        for (;;) {
            const int64_t n = c.conn->read_some(chunk);
            if (n == -sandbox::kErrAgain) break;
            if (n <= 0) {
                c.open = false;
                break;
            }
            c.buf.insert(c.buf.end(), chunk, chunk + n);
        }
        size_t off = 0;
        for (;;) {
            const std::span<const uint8_t> rest(c.buf.data() + off, c.buf.size() - off);
            const size_t fs = e3::frame_size(rest);
            if (fs == 0 || rest.size() < fs) break;
            handle_frame(rest.subspan(0, fs), ci);
            off += fs;
        }
        if (off > 0) c.buf.erase(c.buf.begin(), c.buf.begin() + long(off));
    }
}

void E3Agent::send_due_indications(uint64_t now) {
    for (auto& s : streams_) {
        if (s.finished || !conns_[s.conn_index]->open) continue;
        while (now >= s.next_send_us && s.sent < s.total) {
            // frame content keyed to the scheduled tick: reproducible streams
            const uint64_t t_rel = s.sent * s.sub.period_us;
            e3::Indication ind;
            ind.sub_id = s.sub.sub_id;
            ind.seq = s.sub.next_seq;
            ind.timestamp_us = now;
            ind.frame = gen_iq_frame(cfg_.scenario, t_rel);
            const auto bytes = e3::encode(ind);
            const uint64_t t_send = util::now_us();
            {
                std::lock_guard lk(mu_);
                s.t_sent[ind.seq] = t_send;
                send_times_.push_back(t_send);
                stats_.indications_sent++;
            }
            conns_[s.conn_index]->conn->write(bytes);
            s.sub.next_seq++;
            s.sent++;
            s.next_send_us += s.sub.period_us;
            // after a stall, realign instead of bursting the missed ticks;
            // frame content is tick-indexed, so streams stay reproducible
            if (now >= s.next_send_us) s.next_send_us = now + s.sub.period_us;
        }
        if (s.sent >= s.total && !s.finished) {
            s.finished = true;
            s.finish_deadline_us = now + cfg_.close_grace_us;
        }
    }
}

void E3Agent::maybe_close_finished(uint64_t now) {
    for (auto& s : streams_) {
        if (!s.finished || s.closed) continue;
        const bool all_answered = s.answered >= s.sent;
        if (all_answered || now >= s.finish_deadline_us ||
            !conns_[s.conn_index]->open) {
            conns_[s.conn_index]->conn->close();
            conns_[s.conn_index]->open = false;
            s.closed = true;
        }
    }
    if (!streams_.empty() && all_done() && !done_.load()) {
        done_.store(true);
        done_cv_.notify_all();
    }
}

bool E3Agent::all_done() const {
    for (const auto& s : streams_)
        if (!s.closed) return false;
    return true;
}

void E3Agent::loop() {
    while (!stop_.load()) {
        const uint64_t token = cfg_.hub ? cfg_.hub->activity_token() : 0;

        while (auto c = listener_->try_accept()) {
            auto cs = std::make_unique<ConnState>();
            cs->conn = std::move(c);
            conns_.push_back(std::move(cs));
        }

        drain_reads();
        const uint64_t now = util::now_us();
        send_due_indications(now);
        maybe_close_finished(now);

        // next indication deadline; default poll tick when nothing is armed
        uint64_t deadline = now + 2000;
        bool timer_armed = false;
        for (const auto& s : streams_) {
            if (s.finished || !conns_[s.conn_index]->open) continue;
            deadline = std::min(deadline, s.next_send_us);
            timer_armed = true;
        }
        if (deadline <= util::now_us()) continue;

        if (timer_armed && deadline <= util::now_us() + 3000) {
            // near-term send: absolute sleep with a short spin tail keeps
            // inter-send jitter low; incoming controls are drained right
            // after the wakeup
            constexpr uint64_t kSpinTailUs = 300;
            if (deadline > util::now_us() + kSpinTailUs)
                util::sleep_until_us(deadline - kSpinTailUs);
            while (util::now_us() < deadline) {
            }
        } else if (cfg_.transport == TransportMode::VirtualChannel) {
            cfg_.hub->wait_activity(token, deadline);
        } else {
            std::vector<struct pollfd> fds;
            fds.push_back({listener_->native_fd(), POLLIN, 0});
            for (const auto& c : conns_)
                if (c->open) fds.push_back({c->conn->native_fd(), POLLIN, 0});
            const uint64_t now2 = util::now_us();
            const int timeout_ms =
                deadline > now2 ? int((deadline - now2 + 999) / 1000) : 0;
            ::poll(fds.data(), fds.size(), std::min(timeout_ms, 2));
        }
    }
}

} // namespace agent
