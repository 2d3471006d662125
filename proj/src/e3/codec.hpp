#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "e3/message.hpp"
#include "util/result.hpp"

// E3-lite binary wire format. All multi-byte integers are big-endian, f32 in
// IEEE-754 big-endian byte order.
//
//   frame   := 0xE3 0x01 msg_type:u8 payload_len:u32 payload
//   0x01 SetupRequest        := dapp_id:u32 services:u8
//   0x02 SetupResponse       := dapp_id:u32 status:u8
//   0x03 SubscriptionRequest := dapp_id:u32 service:u8 period_us:u32
//   0x04 SubscriptionResponse:= sub_id:u32 status:u8
//   0x05 Indication          := sub_id:u32 seq:u32 timestamp_us:u64
//                               payload_kind:u8 (kind 1: n_samples:u32 (i:f32 q:f32)^n)
//   0x06 Control             := dapp_id:u32 seq:u32 action:u8
//                               (action 1: n_prb:u16 bitmap:bytes)
//   0x07 ErrorIndication     := code:u8

namespace e3 {

inline constexpr uint8_t kMagic = 0xE3;
inline constexpr uint8_t kVersion = 0x01;
inline constexpr size_t kHeaderSize = 7;

enum class MsgType : uint8_t {
    SetupRequest = 0x01,
    SetupResponse = 0x02,
    SubscriptionRequest = 0x03,
    SubscriptionResponse = 0x04,
    Indication = 0x05,
    Control = 0x06,
    ErrorIndication = 0x07,
};

// Thrown by encode() when a message violates its type invariants
// (inconsistent bitmap length, out-of-range discriminants, ...).
struct InvariantViolation : std::logic_error {
    using std::logic_error::logic_error;
};

enum class DecodeErrorKind {
    BadMagic,
    UnsupportedVersion,
    UnknownMsgType,
    TruncatedPayload,
    TrailingBytes,
    InvalidFieldValue,
};

struct DecodeError {
    DecodeErrorKind kind;
    std::string detail;
};

const char* to_string(DecodeErrorKind kind);

using DecodeResult = util::Result<E3Message, DecodeError>;

// Deterministic: equal messages yield identical bytes.
std::vector<uint8_t> encode(const E3Message& msg);

// Total over arbitrary bytes; expects exactly one complete frame.
// Never reads past the declared payload_len.
DecodeResult decode(std::span<const uint8_t> bytes);

// Stream framing helper: how many bytes the frame starting at data[0] spans.
// Returns 0 if fewer than kHeaderSize bytes are available yet; the caller
// still runs decode() on the full span for header validation.
size_t frame_size(std::span<const uint8_t> data);

} // namespace e3
