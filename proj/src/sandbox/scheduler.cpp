#include "sandbox/scheduler.hpp"

#include <sys/resource.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <algorithm>

#include "util/clock.hpp"

namespace sandbox {

WindowScheduler::WindowScheduler(uint64_t window_us) : window_us_(window_us) {}

WindowScheduler::~WindowScheduler() { stop(); }

void WindowScheduler::add(std::shared_ptr<Instance> inst, uint64_t fuel_budget) {
    std::lock_guard lk(mu_);
    Entry e;
    e.instance_id = inst->id();
    e.prev_executed = inst->meter().executed_total.load(std::memory_order_relaxed);
    e.budget = fuel_budget;
    e.first_window = windows_closed_.load();
    inst->meter().budget.store(fuel_budget, std::memory_order_relaxed);
    inst->meter().epoch.store(e.first_window, std::memory_order_release);
    e.inst = inst;
    entries_.push_back(std::move(e));
}

void WindowScheduler::set_budget(uint32_t instance_id, uint64_t fuel_budget) {
    std::lock_guard lk(mu_);
    for (auto& e : entries_)
        if (e.instance_id == instance_id) e.pending_budget = fuel_budget;
}

void WindowScheduler::start() {
    if (running_.exchange(true)) return;
    stop_.store(false);
    t0_us_ = util::now_us();
    thread_ = std::thread([this] { run(); });
}

void WindowScheduler::stop() {
    if (!running_.load()) return;
    stop_.store(true);
    if (thread_.joinable()) thread_.join();
    running_.store(false);
}

void WindowScheduler::run() {
    // The scheduler is the metering authority: boost it so background host
    // load cannot delay window boundaries (a >1-window stall would cost
    // suspended guests a budget grant). Best effort.
    setpriority(PRIO_PROCESS, id_t(syscall(SYS_gettid)), -19);
    constexpr uint64_t kSpinTailUs = 200;
    for (uint64_t w = 0; !stop_.load(std::memory_order_relaxed);) {
        const uint64_t deadline = t0_us_ + (w + 1) * window_us_;
        if (deadline > util::now_us() + kSpinTailUs)
            util::sleep_until_us(deadline - kSpinTailUs);
        while (util::now_us() < deadline) {
        }
        close_window(w);
        // Window boundaries are wall-aligned. When the whole VM is frozen by
        // the outer host for more than a window, the skipped indices never
        // had execution time: record nothing for them rather than fabricate
        // empty windows, and resume at the index whose deadline lies ahead.
        w = std::max(w + 1, (util::now_us() - t0_us_) / window_us_);
    }
}

void WindowScheduler::close_window(uint64_t w) {
    std::lock_guard lk(mu_);
    std::vector<std::shared_ptr<Instance>> live;
    live.reserve(entries_.size());
    for (auto& e : entries_) {
        auto inst = e.inst.lock();
        if (!inst) continue; // released by the embedder; log stays as-is
        MeterSync& m = inst->meter();
        const uint64_t total = m.executed_total.load(std::memory_order_relaxed);
        WindowUsage u;
        u.instance_id = e.instance_id;
        u.window_index = w;
        u.t_ms = w * window_us_ / 1000;
        if (e.budget == kUnlimitedFuel) {
            u.instructions_used = total - e.prev_executed;
        } else {
            // metered: charge the fuel to the window whose budget granted it,
            // so a guest descheduled across a boundary cannot smear one
            // window's allotment into the next row
            const uint64_t cur = m.cur_epoch_used.load(std::memory_order_relaxed);
            const uint64_t prev = m.prev_epoch_final.load(std::memory_order_acquire);
            const uint64_t we = w & 0xFFFFFFull;
            if (packed_epoch(cur) == we) u.instructions_used = packed_used(cur);
            else if (packed_epoch(prev) == we) u.instructions_used = packed_used(prev);
            else u.instructions_used = 0; // idle or blocked the whole window
            // a burn that finished after its own boundary belongs to the row
            // of the window that granted the fuel; settle that row now that
            // the final count is known (bounded back-scan: lateness can
            // cascade across a few windows under host CPU contention)
            const uint64_t prev_epoch = packed_epoch(prev);
            const size_t scan = std::min<size_t>(e.log.size(), 16);
            for (size_t back = 1; back <= scan; back++) {
                WindowUsage& row = e.log[e.log.size() - back];
                if ((row.window_index & 0xFFFFFFull) != prev_epoch) continue;
                if (packed_used(prev) > row.instructions_used)
                    row.instructions_used = packed_used(prev);
                break;
            }
        }
        u.budget = e.budget;
        u.suspended = m.suspend_epoch.load(std::memory_order_relaxed) == w;
        e.prev_executed = total;
        e.log.push_back(u);

        if (e.pending_budget) {
            e.budget = *e.pending_budget;
            e.pending_budget.reset();
        }
        m.budget.store(e.budget, std::memory_order_relaxed);
        live.push_back(std::move(inst));
    }
    windows_closed_.store(w + 1, std::memory_order_release);
    for (auto& inst : live) {
        inst->meter().epoch.store(w + 1, std::memory_order_release);
        inst->meter().cv.notify_all();
    }
}

util::Result<WindowUsage, UsageError> WindowScheduler::usage(uint32_t instance_id,
                                                             uint64_t window_index) const {
    using R = util::Result<WindowUsage, UsageError>;
    std::lock_guard lk(mu_);
    const Entry* entry = nullptr;
    for (const auto& e : entries_)
        if (e.instance_id == instance_id) entry = &e;
    if (!entry) return R(UsageError::UnknownInstance);

    const uint64_t closed = windows_closed_.load();
    if (window_index < closed) {
        // window indices may have gaps (whole-VM stalls close no window)
        for (auto it = entry->log.rbegin(); it != entry->log.rend(); ++it) {
            if (it->window_index == window_index) return R(*it);
            if (it->window_index < window_index) break;
        }
        return R(UsageError::UnknownWindow);
    }
    auto inst = entry->inst.lock();
    if (window_index == closed && running_.load() && inst) {
        // live snapshot of the open window
        MeterSync& m = inst->meter();
        WindowUsage u;
        u.instance_id = instance_id;
        u.window_index = window_index;
        u.t_ms = window_index * window_us_ / 1000;
        u.instructions_used =
            m.executed_total.load(std::memory_order_relaxed) - entry->prev_executed;
        u.budget = entry->budget;
        u.suspended = m.suspend_epoch.load(std::memory_order_relaxed) == window_index;
        return R(u);
    }
    return R(UsageError::UnknownWindow);
}

std::vector<WindowUsage> WindowScheduler::usage_log() const {
    std::lock_guard lk(mu_);
    std::vector<WindowUsage> all;
    for (const auto& e : entries_)
        all.insert(all.end(), e.log.begin(), e.log.end());
    std::sort(all.begin(), all.end(), [](const WindowUsage& a, const WindowUsage& b) {
        return a.window_index != b.window_index ? a.window_index < b.window_index
                                                : a.instance_id < b.instance_id;
    });
    return all;
}

} // namespace sandbox
