#pragma once

#include <cstdint>
#include <variant>
#include <vector>

// E3-lite message model: everything that crosses the dApp <-> agent boundary.
// The binary wire format lives in codec.hpp; these structs are the in-memory
// form used by the agent, the bench harness and the tests.

namespace e3 {

enum class ServiceKind : uint8_t {
    Report = 1,
    Insert = 2,
    Control = 3,
    Policy = 4,
    Query = 5,
};

inline constexpr uint8_t kStatusOk = 0;
inline constexpr uint8_t kStatusRejected = 1;

// ErrorIndication codes. The wire carries a bare u8; these are the values the
// agent emits.
inline constexpr uint8_t kErrUnknownRequest = 1;
inline constexpr uint8_t kErrUnsupported = 2;

struct SetupRequest {
    uint32_t dapp_id = 0;
    uint8_t services = 0; // bitmask, bit (kind-1) set = service requested
    bool operator==(const SetupRequest&) const = default;
};

struct SetupResponse {
    uint32_t dapp_id = 0;
    uint8_t status = kStatusOk;
    bool operator==(const SetupResponse&) const = default;
};

struct SubscriptionRequest {
    uint32_t dapp_id = 0;
    ServiceKind service = ServiceKind::Report;
    uint32_t period_us = 0;
    bool operator==(const SubscriptionRequest&) const = default;
};

struct SubscriptionResponse {
    uint32_t sub_id = 0;
    uint8_t status = kStatusOk;
    bool operator==(const SubscriptionResponse&) const = default;
};

struct Cf32 {
    float i = 0.0f;
    float q = 0.0f;
    bool operator==(const Cf32&) const = default;
};

// Timestamped baseband samples carried inside an Indication (payload kind 1).
struct IqFrame {
    std::vector<Cf32> samples;
    bool operator==(const IqFrame&) const = default;
};

struct Indication {
    uint32_t sub_id = 0;
    uint32_t seq = 0;
    uint64_t timestamp_us = 0;
    IqFrame frame;
    bool operator==(const Indication&) const = default;
};

// Bitmap over physical resource blocks; bit i set = PRB i blocked.
// Bit order is LSB-first within each byte: bit 0 = LSB of byte 0.
struct PrbBlocklist {
    uint16_t n_prb = 0;
    std::vector<uint8_t> bitmap; // exactly ceil(n_prb/8) bytes, padding bits zero

    bool test(uint16_t prb) const {
        return prb < n_prb && (bitmap[prb / 8] >> (prb % 8)) & 1;
    }
    void set(uint16_t prb) { bitmap[prb / 8] |= uint8_t(1u << (prb % 8)); }

    static PrbBlocklist empty(uint16_t n_prb) {
        return PrbBlocklist{n_prb, std::vector<uint8_t>((n_prb + 7) / 8, 0)};
    }
    bool operator==(const PrbBlocklist&) const = default;
};

struct Control {
    uint32_t dapp_id = 0;
    uint32_t seq = 0; // echoes the seq of the Indication it answers
    PrbBlocklist blocklist;
    bool operator==(const Control&) const = default;
};

struct ErrorIndication {
    uint8_t code = 0;
    bool operator==(const ErrorIndication&) const = default;
};

using E3Message = std::variant<SetupRequest, SetupResponse, SubscriptionRequest,
                               SubscriptionResponse, Indication, Control,
                               ErrorIndication>;

} // namespace e3
