#include "dapp/native_env.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <memory>

#include "sandbox/channel.hpp"
#include "sandbox/net_errno.hpp"
#include "util/clock.hpp"

namespace {

struct Env {
    sandbox::TransportMode transport;
    sandbox::VirtualHub* hub;
    std::map<int32_t, std::unique_ptr<sandbox::Conn>> conns;
    std::map<int32_t, std::unique_ptr<sandbox::Listener>> listeners;
    int32_t next_fd = 3;
};

thread_local Env* tls_env = nullptr;

} // namespace

namespace nativearm {

EnvScope::EnvScope(sandbox::TransportMode transport, sandbox::VirtualHub* hub) {
    tls_env = new Env{transport, hub, {}, {}, 3};
}

EnvScope::~EnvScope() {
    delete tls_env;
    tls_env = nullptr;
}

void set_dapp_config(const std::string& kv_text) {
    char* buf = dapp_config_ptr();
    std::memcpy(buf, kv_text.data(), kv_text.size());
    buf[kv_text.size()] = 0;
}

void reset_dapp_state() {
    // dapp_main reinitialises its statics on entry; the config buffer is the
    // only cross-run state the harness owns.
    dapp_config_ptr()[0] = 0;
}

int32_t run_dapp(sandbox::TransportMode transport, sandbox::VirtualHub* hub,
                 const std::string& kv_config) {
    EnvScope scope(transport, hub);
    set_dapp_config(kv_config);
    return dapp_main();
}

} // namespace nativearm

using namespace sandbox;

extern "C" {

int32_t env_sock_connect(const char* host, uint32_t host_len, uint32_t port) {
    Env* env = tls_env;
    if (!env) return -kErrInval;
    const std::string_view h(host, host_len);
    auto res = env->transport == TransportMode::VirtualChannel
                   ? env->hub->connect(h, uint16_t(port))
                   : tcp_connect(h, uint16_t(port));
    if (!res.ok()) return -res.error();
    const int32_t fd = env->next_fd++;
    env->conns[fd] = std::move(res.value());
    return fd;
}

int32_t env_sock_bind(uint32_t port) {
    Env* env = tls_env;
    if (!env) return -kErrInval;
    auto res = env->transport == TransportMode::VirtualChannel
                   ? env->hub->listen("native", uint16_t(port))
                   : tcp_listen("127.0.0.1", uint16_t(port));
    if (!res.ok()) return -res.error();
    const int32_t fd = env->next_fd++;
    env->listeners[fd] = std::move(res.value());
    return fd;
}

int32_t env_sock_accept(int32_t listen_fd) {
    Env* env = tls_env;
    if (!env) return -kErrInval;
    auto it = env->listeners.find(listen_fd);
    if (it == env->listeners.end()) return -kErrBadFd;
    auto conn = it->second->accept(UINT64_MAX / 2);
    if (!conn) return -kErrPipe;
    const int32_t fd = env->next_fd++;
    env->conns[fd] = std::move(conn);
    return fd;
}

int32_t env_sock_read(int32_t fd, void* buf, uint32_t len) {
    Env* env = tls_env;
    if (!env) return -kErrInval;
    auto it = env->conns.find(fd);
    if (it == env->conns.end()) return -kErrBadFd;
    const int64_t n = it->second->read({static_cast<uint8_t*>(buf), len});
    return int32_t(std::max<int64_t>(n, INT32_MIN));
}

int32_t env_sock_write(int32_t fd, const void* buf, uint32_t len) {
    Env* env = tls_env;
    if (!env) return -kErrInval;
    auto it = env->conns.find(fd);
    if (it == env->conns.end()) return -kErrBadFd;
    const int64_t n = it->second->write({static_cast<const uint8_t*>(buf), len});
    return int32_t(std::clamp<int64_t>(n, INT32_MIN, INT32_MAX));
}

int32_t env_sock_close(int32_t fd) {
    Env* env = tls_env;
    if (!env) return -kErrInval;
    if (auto it = env->conns.find(fd); it != env->conns.end()) {
        it->second->close();
        env->conns.erase(it);
        return 0;
    }
    if (auto it = env->listeners.find(fd); it != env->listeners.end()) {
        it->second->close();
        env->listeners.erase(it);
        return 0;
    }
    return -kErrBadFd;
}

uint64_t env_clock_us(void) { return util::now_us(); }

} // extern "C"
