#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "sandbox/channel.hpp"
#include "sandbox/wasm_module.hpp"
#include "util/result.hpp"

namespace sandbox {

enum class InstanceState : uint8_t { Created, Running, Suspended, Trapped, Exited };

const char* to_string(InstanceState s);

enum class TrapCode : uint8_t {
    None,
    Unreachable,
    MemoryOutOfBounds,
    IntegerDivideByZero,
    IntegerOverflow,
    InvalidConversion,
    CallStackExhausted,
    IndirectCallNull,
    IndirectCallTypeMismatch,
    TableOutOfBounds,
};

const char* to_string(TrapCode t);

// Fuel allowance per fixed-duration execution window.
struct GasBudget {
    uint64_t instructions_per_window = 0;
    uint64_t window_us = 10000;
};

inline constexpr uint64_t kUnlimitedFuel = UINT64_MAX;

// Metering granularity: a guest may run at most this many instructions past a
// window boundary before it notices the new window, and budgets are enforced
// exactly at batch ends. Well under the contract epsilon of 10,000 fuel units.
inline constexpr uint64_t kCheckInterval = 256;

// Packed (epoch, fuel) progress markers: 24 epoch bits, 40 fuel bits. The
// scheduler uses them to attribute metered usage to the window whose budget
// paid for it, even when the burn finishes after the wall-clock boundary.
inline uint64_t pack_epoch_used(uint64_t epoch, uint64_t used) {
    return (epoch & 0xFFFFFFull) << 40 | (used & 0xFFFFFFFFFFull);
}
inline uint64_t packed_epoch(uint64_t p) { return p >> 40; }
inline uint64_t packed_used(uint64_t p) { return p & 0xFFFFFFFFFFull; }

// State shared between a guest thread and the window scheduler.
struct MeterSync {
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<uint64_t> epoch{0};           // window generation counter
    std::atomic<uint64_t> budget{kUnlimitedFuel}; // fuel per window
    std::atomic<uint64_t> executed_total{0};  // lifetime fuel, lags <= kCheckInterval
    std::atomic<uint64_t> suspend_epoch{UINT64_MAX}; // last epoch with a suspension
    std::atomic<uint64_t> cur_epoch_used{0};      // packed, running
    std::atomic<uint64_t> prev_epoch_final{~0ull}; // packed, last finished epoch
    std::atomic<bool> stop{false};
};

enum class TransportMode : uint8_t { VirtualChannel, LoopbackTcp };

struct Endpoint {
    std::string host;
    uint16_t port = 0;
    bool operator==(const Endpoint&) const = default;
};

struct InstanceConfig {
    uint32_t id = 0;
    std::string name;
    std::vector<Endpoint> allowed_endpoints;
    TransportMode transport = TransportMode::VirtualChannel;
    VirtualHub* hub = nullptr;
    uint32_t max_pages_cap = 1024; // engine-wide linear memory cap (64 MiB)
    int pin_cpu = -1;
    int nice = 0; // guest thread scheduling priority (negative = higher)
};

// One sandboxed execution context: private linear memory, globals, socket
// table, and an interpreter thread driven by the window scheduler's fuel
// refills.
class Instance {
public:
    Instance(std::shared_ptr<const Module> mod, InstanceConfig cfg);
    ~Instance();

    Instance(const Instance&) = delete;
    Instance& operator=(const Instance&) = delete;

    uint32_t id() const { return cfg_.id; }
    const std::string& name() const { return cfg_.name; }
    const Module& module() const { return *mod_; }

    // Pre-start synchronous call on the caller's thread, unmetered. Intended
    // for setup exports (config buffer discovery). Must not be used after
    // start().
    util::Result<uint64_t, TrapCode> call_export(std::string_view name,
                                                 std::span<const uint64_t> args = {});

    // Writes key=value config text (NUL-terminated) into the buffer the guest
    // exposes via dapp_config_ptr. Returns false if the module has no such
    // export or the buffer write would be out of bounds.
    bool write_config(std::string_view text);

    // Launches the guest thread: start section first if present, then the
    // named entry (signature [] -> [] or [] -> i32). Returns false if the
    // export is missing or ill-typed.
    bool start(const std::string& entry = "dapp_main");

    // Asks the guest to wind down: wakes suspensions, closes its sockets, and
    // makes the interpreter exit at the next sync point (state Exited,
    // host_stopped set).
    void request_stop();
    void join();

    InstanceState state() const { return state_.load(std::memory_order_acquire); }
    int32_t exit_code() const { return exit_code_; }
    bool host_stopped() const { return host_stopped_; }
    TrapCode trap() const { return trap_; }

    MeterSync& meter() { return meter_; }
    const InstanceConfig& config() const { return cfg_; }

    // Guest memory, bounds-checked. Empty span when [ptr, ptr+len) is out of
    // range and len > 0.
    std::span<uint8_t> mem(uint32_t ptr, uint32_t len);
    size_t mem_size() const { return memory_.size(); }

    // The capability-scoped host-function surface, callable directly against
    // a not-yet-started instance (tests, tooling). args follow the wasm
    // signatures in wasm_module.hpp.
    int32_t dispatch_host(HostFn fn, uint64_t* args);

private:
    struct CallFrame {
        const FuncBody* func;
        uint32_t ip;
        uint32_t locals_base;
    };

    struct SockEntry {
        std::unique_ptr<Conn> conn;
        std::unique_ptr<Listener> listener;
    };

    void instantiate();
    void run_thread(std::string entry);
    // Runs local function `fidx` with nargs already on the stack.
    TrapCode exec(uint32_t fidx);
    bool sync_point(); // false = stop requested
    void flush_counters();
    void roll_epoch(uint64_t next_epoch);

    int32_t host_sock_connect(uint32_t host_ptr, uint32_t host_len, uint32_t port);
    int32_t host_sock_bind(uint32_t port);
    int32_t host_sock_accept(int32_t fd);
    int32_t host_sock_read(int32_t fd, uint32_t buf, uint32_t len);
    int32_t host_sock_write(int32_t fd, uint32_t buf, uint32_t len);
    int32_t host_sock_close(int32_t fd);
    bool endpoint_allowed(std::string_view host, uint16_t port, bool for_bind) const;
    Conn* find_conn(int32_t fd);
    int32_t insert_sock(SockEntry e);

    std::shared_ptr<const Module> mod_;
    InstanceConfig cfg_;

    std::vector<uint8_t> memory_;
    uint32_t max_pages_ = 0;
    std::vector<uint64_t> globals_;
    std::vector<uint32_t> table_;

    std::unique_ptr<uint64_t[]> stack_;
    size_t sp_ = 0;
    std::vector<CallFrame> frames_;

    MeterSync meter_;
    uint64_t fuel_left_ = kUnlimitedFuel;
    uint64_t epoch_seen_ = 0;
    uint64_t executed_local_ = 0;
    uint64_t epoch_used_ = 0;
    uint64_t batch_size_ = 0;
    uint64_t batch_left_ = 0;
    bool stop_seen_ = false;

    std::mutex sock_mu_;
    std::map<int32_t, SockEntry> socks_;
    int32_t next_fd_ = 3;

    std::atomic<InstanceState> state_{InstanceState::Created};
    int32_t exit_code_ = 0;
    bool host_stopped_ = false;
    TrapCode trap_ = TrapCode::None;
    std::thread thread_;
};

} // namespace sandbox
