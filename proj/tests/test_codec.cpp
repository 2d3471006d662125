#include "doctest.h"

#include <random>
#include <vector>

#include "e3/codec.hpp"
#include "msg_gen.hpp"

using namespace e3;

namespace {

std::vector<uint8_t> bytes(std::initializer_list<int> xs) {
    std::vector<uint8_t> v;
    for (int x : xs) v.push_back(uint8_t(x));
    return v;
}

DecodeErrorKind kind_of(const DecodeResult& r) {
    REQUIRE(!r.ok());
    return r.error().kind;
}

} // namespace

TEST_CASE("setup request encodes to the hand-assembled byte string") {
    // frame := E3 01 01 payload_len=5 | dapp_id=1 services=0b101
    const auto expect = bytes({0xE3, 0x01, 0x01, 0x00, 0x00, 0x00, 0x05,
                               0x00, 0x00, 0x00, 0x01, 0x05});
    CHECK(encode(SetupRequest{1, 0b00000101}) == expect);
}

TEST_CASE("empty blocklist control round-trips with an 11-byte payload") {
    const Control m{7, 0, PrbBlocklist::empty(0)};
    const auto enc = encode(m);
    // dapp_id:4 + seq:4 + action:1 + n_prb:2 + no bitmap bytes
    CHECK(enc.size() == kHeaderSize + 11);
    const auto dec = decode(enc);
    REQUIRE(dec.ok());
    CHECK(std::get<Control>(dec.value()) == m);
}

TEST_CASE("indication with 4 zero samples has the grammar-derived payload length") {
    Indication m;
    m.sub_id = 1;
    m.seq = 2;
    m.timestamp_us = 3;
    m.frame.samples.resize(4);
    const auto enc = encode(m);
    // sub_id:4 + seq:4 + timestamp:8 + kind:1 + n_samples:4 + samples:4*8
    CHECK(enc.size() == kHeaderSize + 53);
    CHECK(enc[3] == 0x00);
    CHECK(enc[6] == 53);
}

TEST_CASE("encode is deterministic") {
    std::mt19937_64 rng(7);
    for (size_t v = 0; v < 7; v++) {
        const auto m = testgen::random_message(rng, v);
        CHECK(encode(m) == encode(m));
        const auto copy = m;
        CHECK(encode(copy) == encode(m));
    }
}

TEST_CASE("round trip identity over random valid messages") {
    std::mt19937_64 rng(42);
    for (size_t variant = 0; variant < 7; variant++) {
        for (int i = 0; i < 1000; i++) {
            const auto m = testgen::random_message(rng, variant);
            const auto dec = decode(encode(m));
            REQUIRE(dec.ok());
            CHECK(dec.value() == m);
        }
    }
}

TEST_CASE("decode error taxonomy") {
    SUBCASE("bad magic") {
        CHECK(kind_of(decode(bytes({0x00}))) == DecodeErrorKind::BadMagic);
        CHECK(kind_of(decode({})) == DecodeErrorKind::BadMagic);
    }
    SUBCASE("unsupported version") {
        CHECK(kind_of(decode(bytes({0xE3, 0x02, 0x01, 0, 0, 0, 0}))) ==
              DecodeErrorKind::UnsupportedVersion);
    }
    SUBCASE("unknown msg type") {
        CHECK(kind_of(decode(bytes({0xE3, 0x01, 0x7F, 0, 0, 0, 0}))) ==
              DecodeErrorKind::UnknownMsgType);
        CHECK(kind_of(decode(bytes({0xE3, 0x01, 0x00, 0, 0, 0, 0}))) ==
              DecodeErrorKind::UnknownMsgType);
    }
    SUBCASE("header claiming 100 payload bytes with 50 following") {
        auto v = bytes({0xE3, 0x01, 0x05, 0x00, 0x00, 0x00, 100});
        v.resize(v.size() + 50, 0);
        CHECK(kind_of(decode(v)) == DecodeErrorKind::TruncatedPayload);
    }
    SUBCASE("truncated header") {
        CHECK(kind_of(decode(bytes({0xE3, 0x01, 0x01, 0x00}))) ==
              DecodeErrorKind::TruncatedPayload);
    }
    SUBCASE("bytes after the declared payload") {
        auto v = encode(ErrorIndication{9});
        v.push_back(0xAA);
        CHECK(kind_of(decode(v)) == DecodeErrorKind::TrailingBytes);
    }
    SUBCASE("payload longer than the message grammar") {
        // ErrorIndication with payload_len=2: one code byte plus junk
        const auto v = bytes({0xE3, 0x01, 0x07, 0x00, 0x00, 0x00, 0x02, 0x05, 0x99});
        CHECK(kind_of(decode(v)) == DecodeErrorKind::TrailingBytes);
    }
    SUBCASE("payload shorter than the message grammar") {
        // SetupRequest wants 5 payload bytes, frame declares and carries 3
        const auto v = bytes({0xE3, 0x01, 0x01, 0x00, 0x00, 0x00, 0x03, 1, 2, 3});
        CHECK(kind_of(decode(v)) == DecodeErrorKind::TruncatedPayload);
    }
    SUBCASE("unknown discriminants inside a well-framed payload") {
        // SubscriptionRequest with service=9
        const auto bad_svc =
            bytes({0xE3, 0x01, 0x03, 0x00, 0x00, 0x00, 0x09,
                   0, 0, 0, 1, 9, 0, 0, 0, 100});
        CHECK(kind_of(decode(bad_svc)) == DecodeErrorKind::InvalidFieldValue);
        // SetupResponse with status=5
        const auto bad_status =
            bytes({0xE3, 0x01, 0x02, 0x00, 0x00, 0x00, 0x05, 0, 0, 0, 1, 5});
        CHECK(kind_of(decode(bad_status)) == DecodeErrorKind::InvalidFieldValue);
        // Control with padding bits set past n_prb
        const auto bad_pad =
            bytes({0xE3, 0x01, 0x06, 0x00, 0x00, 0x00, 0x0C,
                   0, 0, 0, 1, 0, 0, 0, 0, 1, 0x00, 0x03, 0xFF});
        CHECK(kind_of(decode(bad_pad)) == DecodeErrorKind::InvalidFieldValue);
    }
}

TEST_CASE("encode rejects invariant violations") {
    CHECK_THROWS_AS(encode(SetupResponse{1, 2}), InvariantViolation);
    CHECK_THROWS_AS(encode(SubscriptionRequest{1, ServiceKind(0), 10}), InvariantViolation);
    CHECK_THROWS_AS(encode(SubscriptionRequest{1, ServiceKind(6), 10}), InvariantViolation);

    Control wrong_len{1, 0, PrbBlocklist{16, std::vector<uint8_t>(1, 0)}};
    CHECK_THROWS_AS(encode(wrong_len), InvariantViolation);

    Control pad_set{1, 0, PrbBlocklist{3, {0xF0}}};
    CHECK_THROWS_AS(encode(pad_set), InvariantViolation);
}

TEST_CASE("decode is total over random byte strings") {
    std::mt19937_64 rng(1234);
    // Pure noise plus valid-prefix mutations; the full 1e5-input run lives in
    // the acceptance suite.
    for (int i = 0; i < 20000; i++) {
        std::vector<uint8_t> v(rng() % 64);
        for (auto& b : v) b = uint8_t(rng());
        (void)decode(v);
    }
    std::mt19937_64 rng2(99);
    for (int i = 0; i < 5000; i++) {
        auto v = encode(testgen::random_message(rng2, rng2() % 7));
        const size_t cut = rng2() % (v.size() + 1);
        v.resize(cut);
        if (!v.empty() && (rng2() & 1)) v[rng2() % v.size()] = uint8_t(rng2());
        (void)decode(v);
    }
}

TEST_CASE("frame_size reports header-declared span") {
    const auto enc = encode(SetupRequest{1, 0});
    CHECK(frame_size(enc) == enc.size());
    CHECK(frame_size(std::span<const uint8_t>(enc.data(), 3)) == 0);
}
