#pragma once

#include <chrono>
#include <cstdint>
#include <thread>

namespace util {

namespace detail {
inline const std::chrono::steady_clock::time_point process_t0 =
    std::chrono::steady_clock::now();
}

// Monotonic microseconds since process start; the single time base shared by
// the agent, the scheduler, and the guests' clock_us host function.
inline uint64_t now_us() {
    return uint64_t(std::chrono::duration_cast<std::chrono::microseconds>(
                        std::chrono::steady_clock::now() - detail::process_t0)
                        .count());
}

inline void sleep_until_us(uint64_t t_us) {
    std::this_thread::sleep_until(detail::process_t0 + std::chrono::microseconds(t_us));
}

} // namespace util
