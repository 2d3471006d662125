#include "sandbox/channel.hpp"

#include <atomic>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

#include "sandbox/net_errno.hpp"
#include "util/clock.hpp"

namespace sandbox {

namespace {

constexpr size_t kQueueCapacity = 256 * 1024;

// One direction of a virtual duplex stream.
struct ByteQueue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<uint8_t> data;
    bool writer_closed = false;
    bool reader_closed = false;
    VirtualHub* hub;

    explicit ByteQueue(VirtualHub* h) : hub(h) {}

    int64_t read(std::span<uint8_t> buf, bool blocking) {
        std::unique_lock lk(mu);
        if (blocking) {
            cv.wait(lk, [&] { return !data.empty() || writer_closed || reader_closed; });
        }
        if (data.empty()) {
            if (writer_closed || reader_closed) return 0;
            return -kErrAgain;
        }
        const size_t n = std::min(buf.size(), data.size());
        for (size_t i = 0; i < n; i++) {
            buf[i] = data.front();
            data.pop_front();
        }
        cv.notify_all();
        return int64_t(n);
    }

    int64_t write(std::span<const uint8_t> buf) {
        size_t written = 0;
        std::unique_lock lk(mu);
        while (written < buf.size()) {
            cv.wait(lk, [&] {
                return data.size() < kQueueCapacity || reader_closed || writer_closed;
            });
            if (reader_closed || writer_closed)
                return written > 0 ? int64_t(written) : -kErrPipe;
            const size_t room = kQueueCapacity - data.size();
            const size_t n = std::min(room, buf.size() - written);
            data.insert(data.end(), buf.begin() + written, buf.begin() + written + n);
            written += n;
            cv.notify_all();
        }
        lk.unlock();
        hub->bump();
        return int64_t(written);
    }

    void close_write() {
        {
            std::lock_guard lk(mu);
            writer_closed = true;
        }
        cv.notify_all();
        hub->bump();
    }
    void close_read() {
        {
            std::lock_guard lk(mu);
            reader_closed = true;
        }
        cv.notify_all();
        hub->bump();
    }
};

struct Duplex {
    ByteQueue a_to_b;
    ByteQueue b_to_a;
    explicit Duplex(VirtualHub* hub) : a_to_b(hub), b_to_a(hub) {}
};

class VirtualConn final : public Conn {
public:
    VirtualConn(std::shared_ptr<Duplex> d, bool is_a) : d_(std::move(d)), is_a_(is_a) {}
    ~VirtualConn() override { close(); }

    int64_t read(std::span<uint8_t> buf) override { return rx().read(buf, true); }
    int64_t read_some(std::span<uint8_t> buf) override { return rx().read(buf, false); }
    int64_t write(std::span<const uint8_t> buf) override { return tx().write(buf); }

    void close() override {
        if (closed_.exchange(true)) return;
        tx().close_write();
        rx().close_read();
    }

private:
    ByteQueue& tx() { return is_a_ ? d_->a_to_b : d_->b_to_a; }
    ByteQueue& rx() { return is_a_ ? d_->b_to_a : d_->a_to_b; }

    std::shared_ptr<Duplex> d_;
    bool is_a_;
    std::atomic<bool> closed_{false};
};

std::string endpoint_key(std::string_view host, uint16_t port) {
    return std::string(host) + ":" + std::to_string(port);
}

} // namespace

struct VirtualHub::ListenQueue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::unique_ptr<Conn>> pending;
    bool closed = false;
    VirtualHub* hub;
};

namespace {

class VirtualListener final : public Listener {
public:
    VirtualListener(VirtualHub* hub, std::string key, std::shared_ptr<VirtualHub::ListenQueue> q)
        : hub_(hub), key_(std::move(key)), q_(std::move(q)) {}
    ~VirtualListener() override { close(); }

    std::unique_ptr<Conn> try_accept() override {
        std::lock_guard lk(q_->mu);
        if (q_->pending.empty()) return nullptr;
        auto c = std::move(q_->pending.front());
        q_->pending.pop_front();
        return c;
    }

    std::unique_ptr<Conn> accept(uint64_t timeout_us) override {
        std::unique_lock lk(q_->mu);
        q_->cv.wait_for(lk, std::chrono::microseconds(timeout_us),
                        [&] { return !q_->pending.empty() || q_->closed; });
        if (q_->pending.empty()) return nullptr;
        auto c = std::move(q_->pending.front());
        q_->pending.pop_front();
        return c;
    }

    void close() override {
        if (closed_.exchange(true)) return;
        {
            std::lock_guard lk(q_->mu);
            q_->closed = true;
        }
        q_->cv.notify_all();
        hub_->unregister(key_, q_.get());
    }

private:
    friend class VirtualHub;
    VirtualHub* hub_;
    std::string key_;
    std::shared_ptr<VirtualHub::ListenQueue> q_;
    std::atomic<bool> closed_{false};
};

} // namespace

util::Result<std::unique_ptr<Conn>, int32_t> VirtualHub::connect(std::string_view host,
                                                                 uint16_t port) {
    std::shared_ptr<ListenQueue> q;
    {
        std::lock_guard lk(mu_);
        auto it = listeners_.find(endpoint_key(host, port));
        if (it == listeners_.end())
            return util::Result<std::unique_ptr<Conn>, int32_t>(kErrConnRefused);
        q = it->second;
    }
    auto duplex = std::make_shared<Duplex>(this);
    auto client = std::make_unique<VirtualConn>(duplex, true);
    auto server = std::make_unique<VirtualConn>(duplex, false);
    {
        std::lock_guard lk(q->mu);
        if (q->closed)
            return util::Result<std::unique_ptr<Conn>, int32_t>(kErrConnRefused);
        q->pending.push_back(std::move(server));
    }
    q->cv.notify_all();
    bump();
    return util::Result<std::unique_ptr<Conn>, int32_t>(std::move(client));
}

util::Result<std::unique_ptr<Listener>, int32_t> VirtualHub::listen(std::string_view host,
                                                                    uint16_t port) {
    auto key = endpoint_key(host, port);
    std::lock_guard lk(mu_);
    if (listeners_.contains(key))
        return util::Result<std::unique_ptr<Listener>, int32_t>(kErrAddrInUse);
    auto q = std::make_shared<ListenQueue>();
    q->hub = this;
    listeners_[key] = q;
    return util::Result<std::unique_ptr<Listener>, int32_t>(
        std::make_unique<VirtualListener>(this, key, q));
}

void VirtualHub::unregister(const std::string& key, const ListenQueue* q) {
    std::lock_guard lk(mu_);
    auto it = listeners_.find(key);
    if (it != listeners_.end() && it->second.get() == q) listeners_.erase(it);
}

uint64_t VirtualHub::activity_token() {
    std::lock_guard lk(act_mu_);
    return activity_;
}

void VirtualHub::wait_activity(uint64_t token, uint64_t deadline_us) {
    std::unique_lock lk(act_mu_);
    const uint64_t now = util::now_us();
    if (deadline_us <= now) return;
    act_cv_.wait_for(lk, std::chrono::microseconds(deadline_us - now),
                     [&] { return activity_ != token; });
}

void VirtualHub::bump() {
    {
        std::lock_guard lk(act_mu_);
        activity_++;
    }
    act_cv_.notify_all();
}

// ---------------------------------------------------------------------------
// Loopback TCP

namespace {

int32_t errno_to_wire(int e) {
    switch (e) {
    case ECONNREFUSED: return kErrConnRefused;
    case EPIPE:
    case ECONNRESET: return kErrPipe;
    case EADDRINUSE: return kErrAddrInUse;
    default: return kErrInval;
    }
}

class TcpConn final : public Conn {
public:
    explicit TcpConn(int fd) : fd_(fd) {}
    ~TcpConn() override { close(); }

    int64_t read(std::span<uint8_t> buf) override {
        for (;;) {
            const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
            if (n >= 0) return n;
            if (errno == EINTR) continue;
            return -errno_to_wire(errno);
        }
    }

    int64_t read_some(std::span<uint8_t> buf) override {
        const ssize_t n = ::recv(fd_, buf.data(), buf.size(), MSG_DONTWAIT);
        if (n >= 0) return n;
        if (errno == EAGAIN || errno == EWOULDBLOCK) return -kErrAgain;
        return -errno_to_wire(errno);
    }

    int64_t write(std::span<const uint8_t> buf) override {
        size_t written = 0;
        while (written < buf.size()) {
            const ssize_t n =
                ::send(fd_, buf.data() + written, buf.size() - written, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                if (written > 0) return int64_t(written);
                return -errno_to_wire(errno);
            }
            written += size_t(n);
        }
        return int64_t(written);
    }

    void close() override {
        if (closed_.exchange(true)) return;
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
    }

    int native_fd() const override { return fd_; }

private:
    int fd_;
    std::atomic<bool> closed_{false};
};

class TcpListener final : public Listener {
public:
    explicit TcpListener(int fd) : fd_(fd) {}
    ~TcpListener() override { close(); }

    std::unique_ptr<Conn> try_accept() override {
        const int c = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (c < 0) return nullptr;
        return std::make_unique<TcpConn>(c);
    }

    std::unique_ptr<Conn> accept(uint64_t timeout_us) override {
        struct pollfd p = {fd_, POLLIN, 0};
        const int rc = ::poll(&p, 1, int(timeout_us / 1000));
        if (rc <= 0) return nullptr;
        return try_accept();
    }

    void close() override {
        if (closed_.exchange(true)) return;
        ::close(fd_);
    }

    int native_fd() const override { return fd_; }

private:
    int fd_;
    std::atomic<bool> closed_{false};
};

bool resolve_v4(std::string_view host, uint16_t port, sockaddr_in* out) {
    std::memset(out, 0, sizeof(*out));
    out->sin_family = AF_INET;
    out->sin_port = htons(port);
    std::string h(host);
    if (h == "localhost") h = "127.0.0.1";
    return ::inet_pton(AF_INET, h.c_str(), &out->sin_addr) == 1;
}

} // namespace

util::Result<std::unique_ptr<Conn>, int32_t> tcp_connect(std::string_view host, uint16_t port) {
    using R = util::Result<std::unique_ptr<Conn>, int32_t>;
    sockaddr_in addr;
    if (!resolve_v4(host, port, &addr)) return R(kErrInval);
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) return R(kErrInval);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        const int e = errno;
        ::close(fd);
        return R(errno_to_wire(e));
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return R(std::make_unique<TcpConn>(fd));
}

util::Result<std::unique_ptr<Listener>, int32_t> tcp_listen(std::string_view host, uint16_t port) {
    using R = util::Result<std::unique_ptr<Listener>, int32_t>;
    sockaddr_in addr;
    if (!resolve_v4(host.empty() ? "127.0.0.1" : host, port, &addr)) return R(kErrInval);
    // non-blocking listen fd: try_accept must never block the event loop
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0);
    if (fd < 0) return R(kErrInval);
    const int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(fd, 16) != 0) {
        const int e = errno;
        ::close(fd);
        return R(errno_to_wire(e));
    }
    return R(std::make_unique<TcpListener>(fd));
}

} // namespace sandbox
