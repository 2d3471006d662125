#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>

#include "util/result.hpp"

// Byte-stream transport between guests, the agent, and the harness. Two modes:
// in-process virtual channels (default, deterministic) and loopback TCP.

namespace sandbox {

class Conn {
public:
    virtual ~Conn() = default;

    // Blocks until at least one byte is available. Returns bytes read,
    // 0 on clean end-of-stream, or a negative errno.
    virtual int64_t read(std::span<uint8_t> buf) = 0;

    // Non-blocking read. Returns -EAGAIN when no data is ready yet.
    virtual int64_t read_some(std::span<uint8_t> buf) = 0;

    // Blocks until everything is accepted. Returns buf.size(), a short count
    // if the peer closed mid-write, or a negative errno.
    virtual int64_t write(std::span<const uint8_t> buf) = 0;

    // Idempotent; wakes any peer blocked on this connection.
    virtual void close() = 0;

    // Underlying fd for poll-based loops; -1 for virtual channels.
    virtual int native_fd() const { return -1; }
};

class Listener {
public:
    virtual ~Listener() = default;
    virtual std::unique_ptr<Conn> try_accept() = 0;
    // Blocks up to timeout_us; nullptr on timeout or closed listener.
    virtual std::unique_ptr<Conn> accept(uint64_t timeout_us) = 0;
    virtual void close() = 0;
    virtual int native_fd() const { return -1; }
};

// In-process endpoint registry keyed by (host, port). Every byte enqueued or
// connection made bumps an activity counter that event loops can wait on.
class VirtualHub {
public:
    util::Result<std::unique_ptr<Conn>, int32_t> connect(std::string_view host, uint16_t port);
    util::Result<std::unique_ptr<Listener>, int32_t> listen(std::string_view host, uint16_t port);

    uint64_t activity_token();
    // Returns when the activity counter moves past `token` or the deadline
    // (monotonic µs, util::now_us clock) expires.
    void wait_activity(uint64_t token, uint64_t deadline_us);
    void bump();

    struct ListenQueue;
    // Internal, called by listeners on close.
    void unregister(const std::string& key, const ListenQueue* q);

private:

    std::mutex mu_;
    std::map<std::string, std::shared_ptr<ListenQueue>> listeners_;
    std::mutex act_mu_;
    std::condition_variable act_cv_;
    uint64_t activity_ = 0;
};

// Loopback TCP. host must be a dotted-quad IPv4 address or "localhost".
util::Result<std::unique_ptr<Conn>, int32_t> tcp_connect(std::string_view host, uint16_t port);
util::Result<std::unique_ptr<Listener>, int32_t> tcp_listen(std::string_view host, uint16_t port);

} // namespace sandbox
