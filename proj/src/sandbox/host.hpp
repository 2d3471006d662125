#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sandbox/instance.hpp"
#include "sandbox/scheduler.hpp"
#include "sandbox/wasm_module.hpp"
#include "util/result.hpp"

// The embedding host: loads and validates dApp modules against their
// manifests, spawns isolated instances, and owns the window scheduler.

namespace sandbox {

struct BudgetSpec {
    enum class Kind { Unlimited, Fixed, Percent };
    Kind kind = Kind::Unlimited;
    GasBudget fixed;
    double percent = 0.0; // of calibrated capacity

    static BudgetSpec unlimited() { return {}; }
    static BudgetSpec fixed_fuel(uint64_t per_window, uint64_t window_us = 10000) {
        return BudgetSpec{Kind::Fixed, GasBudget{per_window, window_us}, 0.0};
    }
    static BudgetSpec percent_of_capacity(double pct) {
        return BudgetSpec{Kind::Percent, {}, pct};
    }

    // Fuel units per window; percent budgets need the calibrated capacity.
    uint64_t resolve(uint64_t capacity_fuel_per_window) const;
};

// The unit of deployment: guest bytecode location, capability whitelist, and
// instruction budget.
struct Manifest {
    std::string name;
    std::string bytecode_path;
    std::vector<Endpoint> allowed_endpoints;
    BudgetSpec budget;
};

// JSON form: {"name": .., "bytecode_path": .., "allowed_endpoints":
// [{"host": .., "port": ..}], "budget": "unlimited" |
// {"instructions_per_window": n, "window_us": n} | {"percent": x}}
util::Result<Manifest, std::string> manifest_from_json_text(const std::string& text);
util::Result<Manifest, std::string> manifest_from_json_file(const std::string& path);

struct ModuleHandle {
    std::shared_ptr<const Module> module;
    Manifest manifest;
};

enum class SpawnError { ResourceExhausted };

class Host {
public:
    struct Options {
        TransportMode transport = TransportMode::VirtualChannel;
        VirtualHub* hub = nullptr; // required in VirtualChannel mode
        size_t max_instances = 16;
        uint32_t max_pages = 1024; // 64 MiB linear memory cap
        uint64_t window_us = 10000;
        int pin_guests_to_cpu = -1;
        int guest_nice = 0;
    };

    explicit Host(Options opts);
    ~Host();

    // Validates bytecode and manifest. Every import must be one of the
    // whitelisted host functions.
    util::Result<ModuleHandle, LoadError> load_module(const Manifest& manifest);

    // Fresh linear memory, empty socket table, budget registered with the
    // scheduler. The caller still configures and start()s the instance.
    util::Result<std::shared_ptr<Instance>, SpawnError>
    spawn_instance(const ModuleHandle& handle, uint64_t fuel_budget = kUnlimitedFuel);

    WindowScheduler& scheduler() { return scheduler_; }
    const Options& options() const { return opts_; }

    size_t live_instances();

private:
    Options opts_;
    WindowScheduler scheduler_;
    std::mutex mu_;
    std::set<std::string> loaded_names_;
    std::vector<std::weak_ptr<Instance>> instances_;
    uint32_t next_instance_id_ = 1;
};

// Runs an unmetered busy-loop guest for duration_us and returns the median
// fuel executed per scheduler window. The busy module must spin flat-out by
// default (mode=flat). Error: CalibrationTooShort for durations under three
// windows.
util::Result<uint64_t, std::string> calibrate_capacity(Host& host,
                                                       const std::string& busy_wasm_path,
                                                       uint64_t duration_us = 1000000);

} // namespace sandbox
