#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "sandbox/instance.hpp"
#include "util/result.hpp"

namespace sandbox {

struct WindowUsage {
    uint32_t instance_id = 0;
    uint64_t window_index = 0;
    uint64_t t_ms = 0; // window start, relative to scheduler start
    uint64_t instructions_used = 0;
    uint64_t budget = kUnlimitedFuel; // fuel per window; kUnlimitedFuel = unmetered
    bool suspended = false;
};

enum class UsageError { UnknownInstance, UnknownWindow };

// Drives fixed-duration execution windows: at every boundary it snapshots each
// registered instance's fuel counter, refreshes budgets, advances the window
// epoch and wakes suspended guests. Sole writer of budget state.
class WindowScheduler {
public:
    explicit WindowScheduler(uint64_t window_us = 10000);
    ~WindowScheduler();

    WindowScheduler(const WindowScheduler&) = delete;
    WindowScheduler& operator=(const WindowScheduler&) = delete;

    uint64_t window_us() const { return window_us_; }

    // Registers an instance and sets its initial per-window budget
    // (kUnlimitedFuel = unmetered). Callable before or while running.
    void add(std::shared_ptr<Instance> inst, uint64_t fuel_budget);

    // Budget change takes effect at the next window boundary.
    void set_budget(uint32_t instance_id, uint64_t fuel_budget);

    void start();
    void stop();
    bool running() const { return running_.load(); }

    uint64_t windows_closed() const { return windows_closed_.load(); }

    // Closed windows return the recorded usage; the currently open window
    // returns a live, monotone snapshot; future windows are UnknownWindow.
    util::Result<WindowUsage, UsageError> usage(uint32_t instance_id,
                                                uint64_t window_index) const;

    // Snapshot of all closed-window records, in (window, instance) order.
    std::vector<WindowUsage> usage_log() const;

private:
    // Holds the instance weakly: an instance released by the embedder stops
    // being scheduled (its recorded usage stays queryable).
    struct Entry {
        std::weak_ptr<Instance> inst;
        uint32_t instance_id = 0;
        uint64_t prev_executed = 0;
        uint64_t budget = kUnlimitedFuel;
        std::optional<uint64_t> pending_budget;
        uint64_t first_window = 0;
        std::vector<WindowUsage> log;
    };

    void run();
    void close_window(uint64_t w);

    const uint64_t window_us_;
    mutable std::mutex mu_;
    std::vector<Entry> entries_;
    std::atomic<uint64_t> windows_closed_{0};
    std::atomic<bool> running_{false};
    std::atomic<bool> stop_{false};
    uint64_t t0_us_ = 0;
    std::thread thread_;
};

} // namespace sandbox
