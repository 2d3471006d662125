#include "sandbox/instance.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include <pthread.h>
#include <sched.h>
#include <sys/resource.h>
#include <sys/syscall.h>
#include <unistd.h>

#include "sandbox/net_errno.hpp"
#include "util/clock.hpp"

namespace sandbox {

namespace {

constexpr size_t kMaxStackSlots = 1 << 18; // 2 MiB of value stack
constexpr size_t kMaxFrames = 1024;
constexpr uint32_t kMaxHostNameLen = 256;

float as_f32(uint64_t slot) { return std::bit_cast<float>(uint32_t(slot)); }
uint64_t from_f32(float v) { return uint64_t(std::bit_cast<uint32_t>(v)); }
double as_f64(uint64_t slot) { return std::bit_cast<double>(slot); }
uint64_t from_f64(double v) { return std::bit_cast<uint64_t>(v); }

constexpr uint64_t kCanonNan32 = 0x7FC00000ull;
constexpr uint64_t kCanonNan64 = 0x7FF8000000000000ull;

float min_wasm(float a, float b, bool* nan) {
    if (std::isnan(a) || std::isnan(b)) {
        *nan = true;
        return 0;
    }
    if (a == b) return std::signbit(a) ? a : b;
    return a < b ? a : b;
}
float max_wasm(float a, float b, bool* nan) {
    if (std::isnan(a) || std::isnan(b)) {
        *nan = true;
        return 0;
    }
    if (a == b) return std::signbit(a) ? b : a;
    return a > b ? a : b;
}
double min_wasm(double a, double b, bool* nan) {
    if (std::isnan(a) || std::isnan(b)) {
        *nan = true;
        return 0;
    }
    if (a == b) return std::signbit(a) ? a : b;
    return a < b ? a : b;
}
double max_wasm(double a, double b, bool* nan) {
    if (std::isnan(a) || std::isnan(b)) {
        *nan = true;
        return 0;
    }
    if (a == b) return std::signbit(a) ? b : a;
    return a > b ? a : b;
}

void pin_to_cpu(int cpu) {
    if (cpu < 0) return;
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(unsigned(cpu), &set);
    pthread_setaffinity_np(pthread_self(), sizeof(set), &set);
}

} // namespace

const char* to_string(InstanceState s) {
    switch (s) {
    case InstanceState::Created: return "Created";
    case InstanceState::Running: return "Running";
    case InstanceState::Suspended: return "Suspended";
    case InstanceState::Trapped: return "Trapped";
    case InstanceState::Exited: return "Exited";
    }
    return "?";
}

const char* to_string(TrapCode t) {
    switch (t) {
    case TrapCode::None: return "None";
    case TrapCode::Unreachable: return "Unreachable";
    case TrapCode::MemoryOutOfBounds: return "MemoryOutOfBounds";
    case TrapCode::IntegerDivideByZero: return "IntegerDivideByZero";
    case TrapCode::IntegerOverflow: return "IntegerOverflow";
    case TrapCode::InvalidConversion: return "InvalidConversion";
    case TrapCode::CallStackExhausted: return "CallStackExhausted";
    case TrapCode::IndirectCallNull: return "IndirectCallNull";
    case TrapCode::IndirectCallTypeMismatch: return "IndirectCallTypeMismatch";
    case TrapCode::TableOutOfBounds: return "TableOutOfBounds";
    }
    return "?";
}

Instance::Instance(std::shared_ptr<const Module> mod, InstanceConfig cfg)
    : mod_(std::move(mod)), cfg_(std::move(cfg)) {
    instantiate();
}

Instance::~Instance() {
    request_stop();
    join();
}

void Instance::instantiate() {
    const auto& m = *mod_;
    max_pages_ = std::min(m.memory.max_pages.value_or(cfg_.max_pages_cap),
                          cfg_.max_pages_cap);
    memory_.assign(size_t(m.memory.min_pages) * kPageSize, 0);
    for (const auto& seg : m.data)
        std::memcpy(memory_.data() + seg.offset, seg.bytes.data(), seg.bytes.size());
    globals_.reserve(m.globals.size());
    for (const auto& g : m.globals) globals_.push_back(g.init_bits);
    table_ = m.table;
    stack_ = std::make_unique<uint64_t[]>(kMaxStackSlots);
}

std::span<uint8_t> Instance::mem(uint32_t ptr, uint32_t len) {
    if (uint64_t(ptr) + len > memory_.size()) return {};
    return {memory_.data() + ptr, len};
}

bool Instance::endpoint_allowed(std::string_view host, uint16_t port, bool for_bind) const {
    for (const auto& e : cfg_.allowed_endpoints) {
        if (e.port != port) continue;
        if (for_bind ? e.host == "0.0.0.0" : e.host == host) return true;
    }
    return false;
}

Conn* Instance::find_conn(int32_t fd) {
    std::lock_guard lk(sock_mu_);
    auto it = socks_.find(fd);
    return it == socks_.end() ? nullptr : it->second.conn.get();
}

int32_t Instance::insert_sock(SockEntry e) {
    std::lock_guard lk(sock_mu_);
    const int32_t fd = next_fd_++;
    socks_[fd] = std::move(e);
    return fd;
}

int32_t Instance::host_sock_connect(uint32_t host_ptr, uint32_t host_len, uint32_t port) {
    if (host_len > kMaxHostNameLen) return -kErrInval;
    if (port > 0xFFFF) return -kErrInval;
    const auto span = mem(host_ptr, host_len);
    if (span.empty() && host_len > 0) return -kErrFault;
    const std::string_view host(reinterpret_cast<const char*>(span.data()), span.size());
    if (!endpoint_allowed(host, uint16_t(port), false)) return -kErrAccess;

    auto res = cfg_.transport == TransportMode::VirtualChannel
                   ? cfg_.hub->connect(host, uint16_t(port))
                   : tcp_connect(host, uint16_t(port));
    if (!res.ok()) return -res.error();
    return insert_sock(SockEntry{std::move(res.value()), nullptr});
}

int32_t Instance::host_sock_bind(uint32_t port) {
    if (port > 0xFFFF) return -kErrInval;
    if (!endpoint_allowed("0.0.0.0", uint16_t(port), true)) return -kErrAccess;
    auto res = cfg_.transport == TransportMode::VirtualChannel
                   ? cfg_.hub->listen(cfg_.name, uint16_t(port))
                   : tcp_listen("127.0.0.1", uint16_t(port));
    if (!res.ok()) return -res.error();
    return insert_sock(SockEntry{nullptr, std::move(res.value())});
}

int32_t Instance::host_sock_accept(int32_t fd) {
    Listener* listener = nullptr;
    {
        std::lock_guard lk(sock_mu_);
        auto it = socks_.find(fd);
        if (it == socks_.end() || !it->second.listener) return -kErrBadFd;
        listener = it->second.listener.get();
    }
    while (!meter_.stop.load(std::memory_order_relaxed)) {
        auto conn = listener->accept(100000);
        if (conn) return insert_sock(SockEntry{std::move(conn), nullptr});
    }
    return -kErrPipe;
}

int32_t Instance::host_sock_read(int32_t fd, uint32_t buf, uint32_t len) {
    Conn* conn = find_conn(fd);
    if (!conn) return -kErrBadFd;
    auto span = mem(buf, len);
    if (span.empty() && len > 0) return -kErrFault;
    if (len == 0) return 0;
    const int64_t n = conn->read(span);
    return int32_t(std::max<int64_t>(n, INT32_MIN));
}

int32_t Instance::host_sock_write(int32_t fd, uint32_t buf, uint32_t len) {
    Conn* conn = find_conn(fd);
    if (!conn) return -kErrBadFd;
    auto span = mem(buf, len);
    if (span.empty() && len > 0) return -kErrFault;
    if (len == 0) return 0;
    const int64_t n = conn->write(span);
    return int32_t(std::clamp<int64_t>(n, INT32_MIN, INT32_MAX));
}

int32_t Instance::host_sock_close(int32_t fd) {
    std::lock_guard lk(sock_mu_);
    auto it = socks_.find(fd);
    if (it == socks_.end()) return -kErrBadFd;
    if (it->second.conn) it->second.conn->close();
    if (it->second.listener) it->second.listener->close();
    socks_.erase(it);
    return 0;
}

int32_t Instance::dispatch_host(HostFn fn, uint64_t* args) {
    switch (fn) {
    case HostFn::SockConnect:
        return host_sock_connect(uint32_t(args[0]), uint32_t(args[1]), uint32_t(args[2]));
    case HostFn::SockBind: return host_sock_bind(uint32_t(args[0]));
    case HostFn::SockAccept: return host_sock_accept(int32_t(uint32_t(args[0])));
    case HostFn::SockRead:
        return host_sock_read(int32_t(uint32_t(args[0])), uint32_t(args[1]),
                              uint32_t(args[2]));
    case HostFn::SockWrite:
        return host_sock_write(int32_t(uint32_t(args[0])), uint32_t(args[1]),
                               uint32_t(args[2]));
    case HostFn::SockClose: return host_sock_close(int32_t(uint32_t(args[0])));
    case HostFn::ClockUs: return 0; // handled inline (i64 result)
    }
    return -kErrInval;
}

void Instance::flush_counters() {
    const uint64_t done = batch_size_ - batch_left_;
    executed_local_ += done;
    epoch_used_ += done;
    batch_size_ = batch_left_ = 0;
    meter_.executed_total.store(executed_local_, std::memory_order_relaxed);
    meter_.cur_epoch_used.store(pack_epoch_used(epoch_seen_, epoch_used_),
                                std::memory_order_relaxed);
}

void Instance::roll_epoch(uint64_t next_epoch) {
    meter_.prev_epoch_final.store(pack_epoch_used(epoch_seen_, epoch_used_),
                                  std::memory_order_release);
    epoch_seen_ = next_epoch;
    epoch_used_ = 0;
    meter_.cur_epoch_used.store(pack_epoch_used(epoch_seen_, 0),
                                std::memory_order_relaxed);
    fuel_left_ = meter_.budget.load(std::memory_order_relaxed);
}

bool Instance::sync_point() {
    flush_counters();
    if (meter_.stop.load(std::memory_order_relaxed)) {
        stop_seen_ = true;
        return false;
    }
    const bool metered = meter_.budget.load(std::memory_order_relaxed) != kUnlimitedFuel;
    const uint64_t e = meter_.epoch.load(std::memory_order_acquire);
    if (e != epoch_seen_) roll_epoch(e);
    if (!metered) fuel_left_ = kUnlimitedFuel;

    while (fuel_left_ == 0) {
        // budget exhausted: sleep until the next window refills it
        meter_.suspend_epoch.store(epoch_seen_, std::memory_order_relaxed);
        state_.store(InstanceState::Suspended, std::memory_order_release);
        {
            std::unique_lock lk(meter_.mu);
            meter_.cv.wait(lk, [&] {
                return meter_.epoch.load(std::memory_order_relaxed) != epoch_seen_ ||
                       meter_.stop.load(std::memory_order_relaxed);
            });
        }
        state_.store(InstanceState::Running, std::memory_order_release);
        if (meter_.stop.load(std::memory_order_relaxed)) {
            stop_seen_ = true;
            return false;
        }
        roll_epoch(meter_.epoch.load(std::memory_order_acquire));
    }

    batch_size_ = std::min<uint64_t>(fuel_left_, kCheckInterval);
    batch_left_ = batch_size_;
    if (fuel_left_ != kUnlimitedFuel) fuel_left_ -= batch_size_;
    return true;
}

// Interpreter. Untyped 64-bit slots; the validator guarantees operand types
// and per-function stack headroom (checked once per call).
TrapCode Instance::exec(uint32_t fidx) {
    const Module& m = *mod_;
    const uint32_t n_imports = uint32_t(m.imported_funcs.size());

    uint8_t* mem_base = memory_.data();
    size_t mem_size = memory_.size();

    size_t sp = sp_;
    const Instr* code = nullptr;
    uint32_t ip = 0;
    uint32_t lb = 0;
    TrapCode trap = TrapCode::None;

    auto enter = [&](uint32_t f) -> TrapCode {
        const FuncBody& fb = m.funcs[f];
        const FuncType& ft = m.types[fb.type_idx];
        const uint32_t nargs = uint32_t(ft.params.size());
        const uint32_t locals_base = uint32_t(sp - nargs);
        if (locals_base + fb.n_locals + fb.max_stack + 1 > kMaxStackSlots ||
            frames_.size() >= kMaxFrames)
            return TrapCode::CallStackExhausted;
        if (fb.n_locals > nargs)
            std::memset(&stack_[sp], 0, size_t(fb.n_locals - nargs) * 8);
        sp = locals_base + fb.n_locals;
        frames_.push_back(CallFrame{&fb, 0, locals_base});
        code = fb.code.data();
        ip = 0;
        lb = locals_base;
        return TrapCode::None;
    };

    trap = enter(fidx);
    if (trap != TrapCode::None) {
        sp_ = sp;
        return trap;
    }

    for (;;) {
        if (batch_left_ == 0) {
            frames_.back().ip = ip;
            if (!sync_point()) {
                sp_ = sp;
                return TrapCode::None; // stop requested
            }
        }
        batch_left_--;

        const Instr in = code[ip++];
        switch (in.op) {
        case 0x00: // unreachable
            trap = TrapCode::Unreachable;
            goto do_trap;

        case 0x0C: { // br
            const uint32_t keep = in.aux;
            const uint32_t drop = uint32_t(in.b);
            if (drop) {
                std::memmove(&stack_[sp - drop - keep], &stack_[sp - keep], keep * 8);
                sp -= drop;
            }
            ip = in.a;
            break;
        }
        case 0x0D: { // br_if
            const uint32_t cond = uint32_t(stack_[--sp]);
            if (cond) {
                const uint32_t keep = in.aux;
                const uint32_t drop = uint32_t(in.b);
                if (drop) {
                    std::memmove(&stack_[sp - drop - keep], &stack_[sp - keep], keep * 8);
                    sp -= drop;
                }
                ip = in.a;
            }
            break;
        }
        case kOpBrIfZ: {
            const uint32_t cond = uint32_t(stack_[--sp]);
            if (!cond) ip = in.a;
            break;
        }
        case 0x0E: { // br_table
            const uint32_t i = uint32_t(stack_[--sp]);
            const uint32_t n_labels = uint32_t(in.b);
            const BrTableEntry& e = m.br_pool[in.a + std::min(i, n_labels)];
            if (e.drop) {
                std::memmove(&stack_[sp - e.drop - e.keep], &stack_[sp - e.keep],
                             size_t(e.keep) * 8);
                sp -= e.drop;
            }
            ip = e.target;
            break;
        }
        case 0x0F: { // return
            const uint32_t keep = in.aux;
            const uint32_t locals_base = frames_.back().locals_base;
            std::memmove(&stack_[locals_base], &stack_[sp - keep], keep * 8);
            sp = locals_base + keep;
            frames_.pop_back();
            if (frames_.empty()) {
                sp_ = sp;
                return TrapCode::None;
            }
            const CallFrame& f = frames_.back();
            code = f.func->code.data();
            ip = f.ip;
            lb = f.locals_base;
            break;
        }
        case 0x10: { // call (local function)
            frames_.back().ip = ip;
            trap = enter(in.a);
            if (trap != TrapCode::None) goto do_trap;
            break;
        }
        case kOpCallHost: {
            const uint32_t nargs = in.aux;
            uint64_t* args = &stack_[sp - nargs];
            if (HostFn(in.a) == HostFn::ClockUs) {
                stack_[sp++] = util::now_us();
            } else {
                const int32_t r = dispatch_host(HostFn(in.a), args);
                sp -= nargs;
                stack_[sp++] = uint64_t(uint32_t(r));
            }
            // host calls may block; surface stop requests promptly
            if (meter_.stop.load(std::memory_order_relaxed)) batch_left_ = 0;
            break;
        }
        case 0x11: { // call_indirect
            const uint32_t idx = uint32_t(stack_[--sp]);
            if (idx >= table_.size()) {
                trap = TrapCode::TableOutOfBounds;
                goto do_trap;
            }
            const uint32_t g = table_[idx];
            if (g == kNoFunc) {
                trap = TrapCode::IndirectCallNull;
                goto do_trap;
            }
            const FuncType& want = m.types[in.a];
            if (!(m.type_of_global_index(g) == want)) {
                trap = TrapCode::IndirectCallTypeMismatch;
                goto do_trap;
            }
            if (g < n_imports) {
                const uint32_t nargs = uint32_t(want.params.size());
                uint64_t* args = &stack_[sp - nargs];
                const HostFn fn = m.imported_funcs[g].fn;
                if (fn == HostFn::ClockUs) {
                    stack_[sp++] = util::now_us();
                } else {
                    const int32_t r = dispatch_host(fn, args);
                    sp -= nargs;
                    stack_[sp++] = uint64_t(uint32_t(r));
                }
            } else {
                frames_.back().ip = ip;
                trap = enter(g - n_imports);
                if (trap != TrapCode::None) goto do_trap;
            }
            break;
        }

        case 0x1A: // drop
            sp--;
            break;
        case 0x1B: { // select
            const uint32_t cond = uint32_t(stack_[--sp]);
            const uint64_t v2 = stack_[--sp];
            if (!cond) stack_[sp - 1] = v2;
            break;
        }

        case 0x20: // local.get
            stack_[sp++] = stack_[lb + in.a];
            break;
        case 0x21: // local.set
            stack_[lb + in.a] = stack_[--sp];
            break;
        case 0x22: // local.tee
            stack_[lb + in.a] = stack_[sp - 1];
            break;
        case 0x23: // global.get
            stack_[sp++] = globals_[in.a];
            break;
        case 0x24: // global.set
            globals_[in.a] = stack_[--sp];
            break;

#define MEM_ADDR(sz)                                               \
    const uint64_t addr = uint64_t(uint32_t(stack_[sp - 1])) + in.a; \
    if (addr + (sz) > mem_size) {                                  \
        trap = TrapCode::MemoryOutOfBounds;                        \
        goto do_trap;                                              \
    }

#define MEM_ADDR_POP(sz)                                           \
    const uint64_t addr = uint64_t(uint32_t(stack_[sp - 2])) + in.a; \
    if (addr + (sz) > mem_size) {                                  \
        trap = TrapCode::MemoryOutOfBounds;                        \
        goto do_trap;                                              \
    }

        case 0x28: { // i32.load
            MEM_ADDR(4)
            uint32_t v;
            std::memcpy(&v, mem_base + addr, 4);
            stack_[sp - 1] = v;
            break;
        }
        case 0x29: { // i64.load
            MEM_ADDR(8)
            uint64_t v;
            std::memcpy(&v, mem_base + addr, 8);
            stack_[sp - 1] = v;
            break;
        }
        case 0x2A: { // f32.load
            MEM_ADDR(4)
            uint32_t v;
            std::memcpy(&v, mem_base + addr, 4);
            stack_[sp - 1] = v;
            break;
        }
        case 0x2B: { // f64.load
            MEM_ADDR(8)
            uint64_t v;
            std::memcpy(&v, mem_base + addr, 8);
            stack_[sp - 1] = v;
            break;
        }
        case 0x2C: { // i32.load8_s
            MEM_ADDR(1)
            stack_[sp - 1] = uint32_t(int32_t(int8_t(mem_base[addr])));
            break;
        }
        case 0x2D: { // i32.load8_u
            MEM_ADDR(1)
            stack_[sp - 1] = mem_base[addr];
            break;
        }
        case 0x2E: { // i32.load16_s
            MEM_ADDR(2)
            uint16_t v;
            std::memcpy(&v, mem_base + addr, 2);
            stack_[sp - 1] = uint32_t(int32_t(int16_t(v)));
            break;
        }
        case 0x2F: { // i32.load16_u
            MEM_ADDR(2)
            uint16_t v;
            std::memcpy(&v, mem_base + addr, 2);
            stack_[sp - 1] = v;
            break;
        }
        case 0x30: { // i64.load8_s
            MEM_ADDR(1)
            stack_[sp - 1] = uint64_t(int64_t(int8_t(mem_base[addr])));
            break;
        }
        case 0x31: { // i64.load8_u
            MEM_ADDR(1)
            stack_[sp - 1] = mem_base[addr];
            break;
        }
        case 0x32: { // i64.load16_s
            MEM_ADDR(2)
            uint16_t v;
            std::memcpy(&v, mem_base + addr, 2);
            stack_[sp - 1] = uint64_t(int64_t(int16_t(v)));
            break;
        }
        case 0x33: { // i64.load16_u
            MEM_ADDR(2)
            uint16_t v;
            std::memcpy(&v, mem_base + addr, 2);
            stack_[sp - 1] = v;
            break;
        }
        case 0x34: { // i64.load32_s
            MEM_ADDR(4)
            uint32_t v;
            std::memcpy(&v, mem_base + addr, 4);
            stack_[sp - 1] = uint64_t(int64_t(int32_t(v)));
            break;
        }
        case 0x35: { // i64.load32_u
            MEM_ADDR(4)
            uint32_t v;
            std::memcpy(&v, mem_base + addr, 4);
            stack_[sp - 1] = v;
            break;
        }

        case 0x36: { // i32.store
            MEM_ADDR_POP(4)
            const uint32_t v = uint32_t(stack_[sp - 1]);
            std::memcpy(mem_base + addr, &v, 4);
            sp -= 2;
            break;
        }
        case 0x37: { // i64.store
            MEM_ADDR_POP(8)
            const uint64_t v = stack_[sp - 1];
            std::memcpy(mem_base + addr, &v, 8);
            sp -= 2;
            break;
        }
        case 0x38: { // f32.store
            MEM_ADDR_POP(4)
            const uint32_t v = uint32_t(stack_[sp - 1]);
            std::memcpy(mem_base + addr, &v, 4);
            sp -= 2;
            break;
        }
        case 0x39: { // f64.store
            MEM_ADDR_POP(8)
            const uint64_t v = stack_[sp - 1];
            std::memcpy(mem_base + addr, &v, 8);
            sp -= 2;
            break;
        }
        case 0x3A: { // i32.store8
            MEM_ADDR_POP(1)
            mem_base[addr] = uint8_t(stack_[sp - 1]);
            sp -= 2;
            break;
        }
        case 0x3B: { // i32.store16
            MEM_ADDR_POP(2)
            const uint16_t v = uint16_t(stack_[sp - 1]);
            std::memcpy(mem_base + addr, &v, 2);
            sp -= 2;
            break;
        }
        case 0x3C: { // i64.store8
            MEM_ADDR_POP(1)
            mem_base[addr] = uint8_t(stack_[sp - 1]);
            sp -= 2;
            break;
        }
        case 0x3D: { // i64.store16
            MEM_ADDR_POP(2)
            const uint16_t v = uint16_t(stack_[sp - 1]);
            std::memcpy(mem_base + addr, &v, 2);
            sp -= 2;
            break;
        }
        case 0x3E: { // i64.store32
            MEM_ADDR_POP(4)
            const uint32_t v = uint32_t(stack_[sp - 1]);
            std::memcpy(mem_base + addr, &v, 4);
            sp -= 2;
            break;
        }

        case 0x3F: // memory.size
            stack_[sp++] = uint32_t(mem_size / kPageSize);
            break;
        case 0x40: { // memory.grow
            const uint32_t want = uint32_t(stack_[sp - 1]);
            const uint32_t cur = uint32_t(mem_size / kPageSize);
            if (uint64_t(cur) + want > max_pages_) {
                stack_[sp - 1] = uint64_t(uint32_t(-1));
            } else {
                memory_.resize(size_t(cur + want) * kPageSize, 0);
                mem_base = memory_.data();
                mem_size = memory_.size();
                stack_[sp - 1] = cur;
            }
            break;
        }

        case 0x41: // i32.const
        case 0x42: // i64.const
        case 0x43: // f32.const
        case 0x44: // f64.const
            stack_[sp++] = in.b;
            break;

#define TOP stack_[sp - 1]
#define NXT stack_[sp - 2]
#define BIN_I32(expr)                                                       \
    {                                                                        \
        const uint32_t rb = uint32_t(stack_[--sp]);                          \
        const uint32_t ra = uint32_t(stack_[sp - 1]);                        \
        (void)ra; (void)rb;                                                  \
        stack_[sp - 1] = uint64_t(uint32_t(expr));                           \
    }                                                                        \
    break;
#define BIN_I64(expr)                                                       \
    {                                                                        \
        const uint64_t rb = stack_[--sp];                                    \
        const uint64_t ra = stack_[sp - 1];                                  \
        (void)ra; (void)rb;                                                  \
        stack_[sp - 1] = uint64_t(expr);                                     \
    }                                                                        \
    break;
#define CMP_F32(expr)                                                       \
    {                                                                        \
        const float rb = as_f32(stack_[--sp]);                               \
        const float ra = as_f32(stack_[sp - 1]);                             \
        stack_[sp - 1] = (expr) ? 1 : 0;                                     \
    }                                                                        \
    break;
#define CMP_F64(expr)                                                       \
    {                                                                        \
        const double rb = as_f64(stack_[--sp]);                              \
        const double ra = as_f64(stack_[sp - 1]);                            \
        stack_[sp - 1] = (expr) ? 1 : 0;                                     \
    }                                                                        \
    break;
#define BIN_F32(expr)                                                       \
    {                                                                        \
        const float rb = as_f32(stack_[--sp]);                               \
        const float ra = as_f32(stack_[sp - 1]);                             \
        stack_[sp - 1] = from_f32(expr);                                     \
    }                                                                        \
    break;
#define BIN_F64(expr)                                                       \
    {                                                                        \
        const double rb = as_f64(stack_[--sp]);                              \
        const double ra = as_f64(stack_[sp - 1]);                            \
        stack_[sp - 1] = from_f64(expr);                                     \
    }                                                                        \
    break;

        // i32 comparisons
        case 0x45: TOP = uint32_t(TOP) == 0 ? 1 : 0; break;
        case 0x46: BIN_I32(ra == rb)
        case 0x47: BIN_I32(ra != rb)
        case 0x48: BIN_I32(int32_t(ra) < int32_t(rb))
        case 0x49: BIN_I32(ra < rb)
        case 0x4A: BIN_I32(int32_t(ra) > int32_t(rb))
        case 0x4B: BIN_I32(ra > rb)
        case 0x4C: BIN_I32(int32_t(ra) <= int32_t(rb))
        case 0x4D: BIN_I32(ra <= rb)
        case 0x4E: BIN_I32(int32_t(ra) >= int32_t(rb))
        case 0x4F: BIN_I32(ra >= rb)

        // i64 comparisons
        case 0x50: TOP = TOP == 0 ? 1 : 0; break;
        case 0x51: BIN_I64((ra == rb) ? 1 : 0)
        case 0x52: BIN_I64((ra != rb) ? 1 : 0)
        case 0x53: BIN_I64((int64_t(ra) < int64_t(rb)) ? 1 : 0)
        case 0x54: BIN_I64((ra < rb) ? 1 : 0)
        case 0x55: BIN_I64((int64_t(ra) > int64_t(rb)) ? 1 : 0)
        case 0x56: BIN_I64((ra > rb) ? 1 : 0)
        case 0x57: BIN_I64((int64_t(ra) <= int64_t(rb)) ? 1 : 0)
        case 0x58: BIN_I64((ra <= rb) ? 1 : 0)
        case 0x59: BIN_I64((int64_t(ra) >= int64_t(rb)) ? 1 : 0)
        case 0x5A: BIN_I64((ra >= rb) ? 1 : 0)

        // f32 comparisons
        case 0x5B: CMP_F32(ra == rb)
        case 0x5C: CMP_F32(ra != rb)
        case 0x5D: CMP_F32(ra < rb)
        case 0x5E: CMP_F32(ra > rb)
        case 0x5F: CMP_F32(ra <= rb)
        case 0x60: CMP_F32(ra >= rb)
        // f64 comparisons
        case 0x61: CMP_F64(ra == rb)
        case 0x62: CMP_F64(ra != rb)
        case 0x63: CMP_F64(ra < rb)
        case 0x64: CMP_F64(ra > rb)
        case 0x65: CMP_F64(ra <= rb)
        case 0x66: CMP_F64(ra >= rb)

        // i32 arithmetic
        case 0x67: TOP = uint64_t(std::countl_zero(uint32_t(TOP))); break;
        case 0x68: TOP = uint64_t(std::countr_zero(uint32_t(TOP))); break;
        case 0x69: TOP = uint64_t(std::popcount(uint32_t(TOP))); break;
        case 0x6A: BIN_I32(ra + rb)
        case 0x6B: BIN_I32(ra - rb)
        case 0x6C: BIN_I32(ra * rb)
        case 0x6D: { // i32.div_s
            const int32_t rb = int32_t(uint32_t(stack_[--sp]));
            const int32_t ra = int32_t(uint32_t(stack_[sp - 1]));
            if (rb == 0) { trap = TrapCode::IntegerDivideByZero; goto do_trap; }
            if (ra == INT32_MIN && rb == -1) { trap = TrapCode::IntegerOverflow; goto do_trap; }
            stack_[sp - 1] = uint64_t(uint32_t(ra / rb));
            break;
        }
        case 0x6E: { // i32.div_u
            const uint32_t rb = uint32_t(stack_[--sp]);
            const uint32_t ra = uint32_t(stack_[sp - 1]);
            if (rb == 0) { trap = TrapCode::IntegerDivideByZero; goto do_trap; }
            stack_[sp - 1] = ra / rb;
            break;
        }
        case 0x6F: { // i32.rem_s
            const int32_t rb = int32_t(uint32_t(stack_[--sp]));
            const int32_t ra = int32_t(uint32_t(stack_[sp - 1]));
            if (rb == 0) { trap = TrapCode::IntegerDivideByZero; goto do_trap; }
            stack_[sp - 1] =
                (ra == INT32_MIN && rb == -1) ? 0 : uint64_t(uint32_t(ra % rb));
            break;
        }
        case 0x70: { // i32.rem_u
            const uint32_t rb = uint32_t(stack_[--sp]);
            const uint32_t ra = uint32_t(stack_[sp - 1]);
            if (rb == 0) { trap = TrapCode::IntegerDivideByZero; goto do_trap; }
            stack_[sp - 1] = ra % rb;
            break;
        }
        case 0x71: BIN_I32(ra & rb)
        case 0x72: BIN_I32(ra | rb)
        case 0x73: BIN_I32(ra ^ rb)
        case 0x74: BIN_I32(ra << (rb & 31))
        case 0x75: BIN_I32(uint32_t(int32_t(ra) >> (rb & 31)))
        case 0x76: BIN_I32(ra >> (rb & 31))
        case 0x77: BIN_I32(std::rotl(ra, int(rb & 31)))
        case 0x78: BIN_I32(std::rotr(ra, int(rb & 31)))

        // i64 arithmetic
        case 0x79: TOP = uint64_t(std::countl_zero(TOP)); break;
        case 0x7A: TOP = uint64_t(std::countr_zero(TOP)); break;
        case 0x7B: TOP = uint64_t(std::popcount(TOP)); break;
        case 0x7C: BIN_I64(ra + rb)
        case 0x7D: BIN_I64(ra - rb)
        case 0x7E: BIN_I64(ra * rb)
        case 0x7F: { // i64.div_s
            const int64_t rb = int64_t(stack_[--sp]);
            const int64_t ra = int64_t(stack_[sp - 1]);
            if (rb == 0) { trap = TrapCode::IntegerDivideByZero; goto do_trap; }
            if (ra == INT64_MIN && rb == -1) { trap = TrapCode::IntegerOverflow; goto do_trap; }
            stack_[sp - 1] = uint64_t(ra / rb);
            break;
        }
        case 0x80: { // i64.div_u
            const uint64_t rb = stack_[--sp];
            if (rb == 0) { trap = TrapCode::IntegerDivideByZero; goto do_trap; }
            stack_[sp - 1] = stack_[sp - 1] / rb;
            break;
        }
        case 0x81: { // i64.rem_s
            const int64_t rb = int64_t(stack_[--sp]);
            const int64_t ra = int64_t(stack_[sp - 1]);
            if (rb == 0) { trap = TrapCode::IntegerDivideByZero; goto do_trap; }
            stack_[sp - 1] = (ra == INT64_MIN && rb == -1) ? 0 : uint64_t(ra % rb);
            break;
        }
        case 0x82: { // i64.rem_u
            const uint64_t rb = stack_[--sp];
            if (rb == 0) { trap = TrapCode::IntegerDivideByZero; goto do_trap; }
            stack_[sp - 1] = stack_[sp - 1] % rb;
            break;
        }
        case 0x83: BIN_I64(ra & rb)
        case 0x84: BIN_I64(ra | rb)
        case 0x85: BIN_I64(ra ^ rb)
        case 0x86: BIN_I64(ra << (rb & 63))
        case 0x87: BIN_I64(uint64_t(int64_t(ra) >> (rb & 63)))
        case 0x88: BIN_I64(ra >> (rb & 63))
        case 0x89: BIN_I64(std::rotl(ra, int(rb & 63)))
        case 0x8A: BIN_I64(std::rotr(ra, int(rb & 63)))

        // f32 arithmetic
        case 0x8B: TOP = from_f32(std::fabs(as_f32(TOP))); break;
        case 0x8C: TOP = from_f32(-as_f32(TOP)); break;
        case 0x8D: TOP = from_f32(std::ceil(as_f32(TOP))); break;
        case 0x8E: TOP = from_f32(std::floor(as_f32(TOP))); break;
        case 0x8F: TOP = from_f32(std::trunc(as_f32(TOP))); break;
        case 0x90: TOP = from_f32(std::nearbyint(as_f32(TOP))); break;
        case 0x91: TOP = from_f32(std::sqrt(as_f32(TOP))); break;
        case 0x92: BIN_F32(ra + rb)
        case 0x93: BIN_F32(ra - rb)
        case 0x94: BIN_F32(ra * rb)
        case 0x95: BIN_F32(ra / rb)
        case 0x96: { // f32.min
            const float rb = as_f32(stack_[--sp]);
            const float ra = as_f32(stack_[sp - 1]);
            bool nan = false;
            const float v = min_wasm(ra, rb, &nan);
            stack_[sp - 1] = nan ? kCanonNan32 : from_f32(v);
            break;
        }
        case 0x97: { // f32.max
            const float rb = as_f32(stack_[--sp]);
            const float ra = as_f32(stack_[sp - 1]);
            bool nan = false;
            const float v = max_wasm(ra, rb, &nan);
            stack_[sp - 1] = nan ? kCanonNan32 : from_f32(v);
            break;
        }
        case 0x98: BIN_F32(std::copysign(ra, rb))

        // f64 arithmetic
        case 0x99: TOP = from_f64(std::fabs(as_f64(TOP))); break;
        case 0x9A: TOP = from_f64(-as_f64(TOP)); break;
        case 0x9B: TOP = from_f64(std::ceil(as_f64(TOP))); break;
        case 0x9C: TOP = from_f64(std::floor(as_f64(TOP))); break;
        case 0x9D: TOP = from_f64(std::trunc(as_f64(TOP))); break;
        case 0x9E: TOP = from_f64(std::nearbyint(as_f64(TOP))); break;
        case 0x9F: TOP = from_f64(std::sqrt(as_f64(TOP))); break;
        case 0xA0: BIN_F64(ra + rb)
        case 0xA1: BIN_F64(ra - rb)
        case 0xA2: BIN_F64(ra * rb)
        case 0xA3: BIN_F64(ra / rb)
        case 0xA4: { // f64.min
            const double rb = as_f64(stack_[--sp]);
            const double ra = as_f64(stack_[sp - 1]);
            bool nan = false;
            const double v = min_wasm(ra, rb, &nan);
            stack_[sp - 1] = nan ? kCanonNan64 : from_f64(v);
            break;
        }
        case 0xA5: { // f64.max
            const double rb = as_f64(stack_[--sp]);
            const double ra = as_f64(stack_[sp - 1]);
            bool nan = false;
            const double v = max_wasm(ra, rb, &nan);
            stack_[sp - 1] = nan ? kCanonNan64 : from_f64(v);
            break;
        }
        case 0xA6: BIN_F64(std::copysign(ra, rb))

        // conversions
        case 0xA7: TOP = uint32_t(TOP); break; // i32.wrap_i64
        case 0xA8: { // i32.trunc_f32_s
            const double v = as_f32(TOP);
            if (!(v > -2147483649.0 && v < 2147483648.0)) {
                trap = std::isnan(v) ? TrapCode::InvalidConversion : TrapCode::IntegerOverflow;
                goto do_trap;
            }
            TOP = uint64_t(uint32_t(int32_t(v)));
            break;
        }
        case 0xA9: { // i32.trunc_f32_u
            const double v = as_f32(TOP);
            if (!(v > -1.0 && v < 4294967296.0)) {
                trap = std::isnan(v) ? TrapCode::InvalidConversion : TrapCode::IntegerOverflow;
                goto do_trap;
            }
            TOP = uint64_t(uint32_t(v));
            break;
        }
        case 0xAA: { // i32.trunc_f64_s
            const double v = as_f64(TOP);
            if (!(v > -2147483649.0 && v < 2147483648.0)) {
                trap = std::isnan(v) ? TrapCode::InvalidConversion : TrapCode::IntegerOverflow;
                goto do_trap;
            }
            TOP = uint64_t(uint32_t(int32_t(v)));
            break;
        }
        case 0xAB: { // i32.trunc_f64_u
            const double v = as_f64(TOP);
            if (!(v > -1.0 && v < 4294967296.0)) {
                trap = std::isnan(v) ? TrapCode::InvalidConversion : TrapCode::IntegerOverflow;
                goto do_trap;
            }
            TOP = uint64_t(uint32_t(v));
            break;
        }
        case 0xAC: TOP = uint64_t(int64_t(int32_t(uint32_t(TOP)))); break;
        case 0xAD: TOP = uint64_t(uint32_t(TOP)); break;
        case 0xAE: { // i64.trunc_f32_s
            const double v = as_f32(TOP);
            if (!(v >= -9223372036854775808.0 && v < 9223372036854775808.0)) {
                trap = std::isnan(v) ? TrapCode::InvalidConversion : TrapCode::IntegerOverflow;
                goto do_trap;
            }
            TOP = uint64_t(int64_t(v));
            break;
        }
        case 0xAF: { // i64.trunc_f32_u
            const double v = as_f32(TOP);
            if (!(v > -1.0 && v < 18446744073709551616.0)) {
                trap = std::isnan(v) ? TrapCode::InvalidConversion : TrapCode::IntegerOverflow;
                goto do_trap;
            }
            TOP = uint64_t(v);
            break;
        }
        case 0xB0: { // i64.trunc_f64_s
            const double v = as_f64(TOP);
            if (!(v >= -9223372036854775808.0 && v < 9223372036854775808.0)) {
                trap = std::isnan(v) ? TrapCode::InvalidConversion : TrapCode::IntegerOverflow;
                goto do_trap;
            }
            TOP = uint64_t(int64_t(v));
            break;
        }
        case 0xB1: { // i64.trunc_f64_u
            const double v = as_f64(TOP);
            if (!(v > -1.0 && v < 18446744073709551616.0)) {
                trap = std::isnan(v) ? TrapCode::InvalidConversion : TrapCode::IntegerOverflow;
                goto do_trap;
            }
            TOP = uint64_t(v);
            break;
        }
        case 0xB2: TOP = from_f32(float(int32_t(uint32_t(TOP)))); break;
        case 0xB3: TOP = from_f32(float(uint32_t(TOP))); break;
        case 0xB4: TOP = from_f32(float(int64_t(TOP))); break;
        case 0xB5: TOP = from_f32(float(TOP)); break;
        case 0xB6: TOP = from_f32(float(as_f64(TOP))); break;
        case 0xB7: TOP = from_f64(double(int32_t(uint32_t(TOP)))); break;
        case 0xB8: TOP = from_f64(double(uint32_t(TOP))); break;
        case 0xB9: TOP = from_f64(double(int64_t(TOP))); break;
        case 0xBA: TOP = from_f64(double(TOP)); break;
        case 0xBB: TOP = from_f64(double(as_f32(TOP))); break;
        case 0xBC: TOP = uint32_t(TOP); break; // i32.reinterpret_f32
        case 0xBD: break;                      // i64.reinterpret_f64 (bits already)
        case 0xBE: TOP = uint32_t(TOP); break; // f32.reinterpret_i32
        case 0xBF: break;                      // f64.reinterpret_i64

        // sign extension
        case 0xC0: TOP = uint64_t(uint32_t(int32_t(int8_t(uint8_t(TOP))))); break;
        case 0xC1: TOP = uint64_t(uint32_t(int32_t(int16_t(uint16_t(TOP))))); break;
        case 0xC2: TOP = uint64_t(int64_t(int8_t(uint8_t(TOP)))); break;
        case 0xC3: TOP = uint64_t(int64_t(int16_t(uint16_t(TOP)))); break;
        case 0xC4: TOP = uint64_t(int64_t(int32_t(uint32_t(TOP)))); break;

        // saturating truncations (0xFC 0..7)
        case 0x100: { // i32.trunc_sat_f32_s
            const double v = as_f32(TOP);
            int32_t r;
            if (std::isnan(v)) r = 0;
            else if (v <= -2147483648.0) r = INT32_MIN;
            else if (v >= 2147483647.0) r = INT32_MAX;
            else r = int32_t(v);
            TOP = uint64_t(uint32_t(r));
            break;
        }
        case 0x101: { // i32.trunc_sat_f32_u
            const double v = as_f32(TOP);
            uint32_t r;
            if (std::isnan(v) || v <= -1.0) r = 0;
            else if (v >= 4294967295.0) r = UINT32_MAX;
            else r = uint32_t(v);
            TOP = r;
            break;
        }
        case 0x102: { // i32.trunc_sat_f64_s
            const double v = as_f64(TOP);
            int32_t r;
            if (std::isnan(v)) r = 0;
            else if (v <= -2147483648.0) r = INT32_MIN;
            else if (v >= 2147483647.0) r = INT32_MAX;
            else r = int32_t(v);
            TOP = uint64_t(uint32_t(r));
            break;
        }
        case 0x103: { // i32.trunc_sat_f64_u
            const double v = as_f64(TOP);
            uint32_t r;
            if (std::isnan(v) || v <= -1.0) r = 0;
            else if (v >= 4294967295.0) r = UINT32_MAX;
            else r = uint32_t(v);
            TOP = r;
            break;
        }
        case 0x104: case 0x106: { // i64.trunc_sat_f32_s / f64_s
            const double v = in.op == 0x104 ? double(as_f32(TOP)) : as_f64(TOP);
            int64_t r;
            if (std::isnan(v)) r = 0;
            else if (v < -9223372036854775808.0) r = INT64_MIN;
            else if (v >= 9223372036854775808.0) r = INT64_MAX;
            else r = int64_t(v);
            TOP = uint64_t(r);
            break;
        }
        case 0x105: case 0x107: { // i64.trunc_sat_f32_u / f64_u
            const double v = in.op == 0x105 ? double(as_f32(TOP)) : as_f64(TOP);
            uint64_t r;
            if (std::isnan(v) || v <= -1.0) r = 0;
            else if (v >= 18446744073709551616.0) r = UINT64_MAX;
            else r = uint64_t(v);
            TOP = r;
            break;
        }

        case 0x10A: { // memory.copy
            const uint32_t n = uint32_t(stack_[--sp]);
            const uint32_t s = uint32_t(stack_[--sp]);
            const uint32_t d = uint32_t(stack_[--sp]);
            if (uint64_t(s) + n > mem_size || uint64_t(d) + n > mem_size) {
                trap = TrapCode::MemoryOutOfBounds;
                goto do_trap;
            }
            std::memmove(mem_base + d, mem_base + s, n);
            break;
        }
        case 0x10B: { // memory.fill
            const uint32_t n = uint32_t(stack_[--sp]);
            const uint8_t v = uint8_t(stack_[--sp]);
            const uint32_t d = uint32_t(stack_[--sp]);
            if (uint64_t(d) + n > mem_size) {
                trap = TrapCode::MemoryOutOfBounds;
                goto do_trap;
            }
            std::memset(mem_base + d, v, n);
            break;
        }

        default:
            trap = TrapCode::Unreachable;
            goto do_trap;
        }
        continue;

    do_trap:
        sp_ = sp;
        return trap;
    }
}

util::Result<uint64_t, TrapCode> Instance::call_export(std::string_view name,
                                                       std::span<const uint64_t> args) {
    using R = util::Result<uint64_t, TrapCode>;
    const ExportEntry* e = mod_->find_export(name, ExportKind::Func);
    if (!e || e->index < mod_->imported_funcs.size()) return R(TrapCode::Unreachable);
    const uint32_t local = e->index - uint32_t(mod_->imported_funcs.size());
    const FuncType& ft = mod_->types[mod_->funcs[local].type_idx];
    if (ft.params.size() != args.size()) return R(TrapCode::Unreachable);

    frames_.clear();
    sp_ = 0;
    for (const uint64_t a : args) stack_[sp_++] = a;
    const uint64_t save_fuel = fuel_left_;
    fuel_left_ = kUnlimitedFuel;
    batch_size_ = batch_left_ = 0;
    const TrapCode tc = exec(local);
    flush_counters();
    fuel_left_ = save_fuel;
    if (tc != TrapCode::None) return R(tc);
    if (stop_seen_) return R(TrapCode::Unreachable);
    return R(ft.result ? stack_[sp_ - 1] : 0);
}

bool Instance::write_config(std::string_view text) {
    auto r = call_export("dapp_config_ptr");
    if (!r.ok()) return false;
    const uint32_t ptr = uint32_t(r.value());
    auto span = mem(ptr, uint32_t(text.size()) + 1);
    if (span.empty()) return false;
    std::memcpy(span.data(), text.data(), text.size());
    span[text.size()] = 0;
    return true;
}

bool Instance::start(const std::string& entry) {
    const ExportEntry* e = mod_->find_export(entry, ExportKind::Func);
    if (!e || e->index < mod_->imported_funcs.size()) return false;
    const uint32_t local = e->index - uint32_t(mod_->imported_funcs.size());
    const FuncType& ft = mod_->types[mod_->funcs[local].type_idx];
    if (!ft.params.empty()) return false;
    if (ft.result && *ft.result != ValType::I32) return false;
    if (state_.load() != InstanceState::Created) return false;

    thread_ = std::thread([this, entry] { run_thread(entry); });
    return true;
}

void Instance::run_thread(std::string entry) {
    pin_to_cpu(cfg_.pin_cpu);
    if (cfg_.nice != 0)
        setpriority(PRIO_PROCESS, id_t(syscall(SYS_gettid)), cfg_.nice);
    state_.store(InstanceState::Running, std::memory_order_release);

    epoch_seen_ = meter_.epoch.load();
    fuel_left_ = meter_.budget.load();
    batch_size_ = batch_left_ = 0;

    TrapCode tc = TrapCode::None;
    const uint32_t n_imports = uint32_t(mod_->imported_funcs.size());

    frames_.clear();
    sp_ = 0;
    if (mod_->start_func && *mod_->start_func >= n_imports)
        tc = exec(*mod_->start_func - n_imports);

    uint64_t result = 0;
    if (tc == TrapCode::None && !stop_seen_) {
        frames_.clear();
        sp_ = 0;
        const ExportEntry* e = mod_->find_export(entry, ExportKind::Func);
        const uint32_t local = e->index - n_imports;
        const FuncType& ft = mod_->types[mod_->funcs[local].type_idx];
        tc = exec(local);
        if (tc == TrapCode::None && !stop_seen_ && ft.result) result = stack_[sp_ - 1];
    }

    flush_counters();

    // release all network resources on the way out
    {
        std::lock_guard lk(sock_mu_);
        for (auto& [fd, s] : socks_) {
            if (s.conn) s.conn->close();
            if (s.listener) s.listener->close();
        }
    }

    if (tc != TrapCode::None) {
        trap_ = tc;
        state_.store(InstanceState::Trapped, std::memory_order_release);
    } else {
        exit_code_ = int32_t(uint32_t(result));
        host_stopped_ = stop_seen_;
        state_.store(InstanceState::Exited, std::memory_order_release);
    }
}

void Instance::request_stop() {
    meter_.stop.store(true, std::memory_order_relaxed);
    meter_.cv.notify_all();
    std::lock_guard lk(sock_mu_);
    for (auto& [fd, s] : socks_) {
        if (s.conn) s.conn->close();
        if (s.listener) s.listener->close();
    }
}

void Instance::join() {
    if (thread_.joinable()) thread_.join();
}

} // namespace sandbox
