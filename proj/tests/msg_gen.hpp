#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>

#include "e3/message.hpp"

// Random valid-message generators shared by the codec unit tests and the
// acceptance suite.

namespace testgen {

inline float finite_f32(std::mt19937_64& rng) {
    for (;;) {
        const auto bits = uint32_t(rng());
        const float f = std::bit_cast<float>(bits);
        if (std::isfinite(f)) return f;
    }
}

inline e3::IqFrame random_frame(std::mt19937_64& rng, size_t max_samples = 64) {
    e3::IqFrame frame;
    const size_t n = 1 + size_t(rng() % max_samples);
    frame.samples.resize(n);
    for (auto& s : frame.samples) {
        s.i = finite_f32(rng);
        s.q = finite_f32(rng);
    }
    return frame;
}

inline e3::PrbBlocklist random_blocklist(std::mt19937_64& rng, uint16_t max_prb = 300) {
    const auto n_prb = uint16_t(rng() % (max_prb + 1u));
    auto bl = e3::PrbBlocklist::empty(n_prb);
    for (uint16_t p = 0; p < n_prb; p++)
        if (rng() & 1) bl.set(p);
    return bl;
}

// variant index in [0, 6]
inline e3::E3Message random_message(std::mt19937_64& rng, size_t variant) {
    switch (variant) {
    case 0: return e3::SetupRequest{uint32_t(rng()), uint8_t(rng())};
    case 1: return e3::SetupResponse{uint32_t(rng()), uint8_t(rng() % 2)};
    case 2:
        return e3::SubscriptionRequest{uint32_t(rng()), e3::ServiceKind(1 + rng() % 5),
                                       uint32_t(rng())};
    case 3: return e3::SubscriptionResponse{uint32_t(rng()), uint8_t(rng() % 2)};
    case 4:
        return e3::Indication{uint32_t(rng()), uint32_t(rng()), rng(), random_frame(rng)};
    case 5: return e3::Control{uint32_t(rng()), uint32_t(rng()), random_blocklist(rng)};
    default: return e3::ErrorIndication{uint8_t(rng())};
    }
}

} // namespace testgen
