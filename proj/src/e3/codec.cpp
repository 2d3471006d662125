#include "e3/codec.hpp"

#include <bit>
#include <cstring>

namespace e3 {

namespace {

void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    put_u32(out, uint32_t(v >> 32));
    put_u32(out, uint32_t(v));
}

void put_f32(std::vector<uint8_t>& out, float v) {
    put_u32(out, std::bit_cast<uint32_t>(v));
}

// Bounded big-endian reader over one payload. All getters report truncation
// through ok; decode maps that to TruncatedPayload.
struct Reader {
    const uint8_t* p;
    size_t len;
    size_t pos = 0;
    bool ok = true;

    bool need(size_t n) {
        if (len - pos < n) {
            ok = false;
            return false;
        }
        return true;
    }
    uint8_t u8() {
        if (!need(1)) return 0;
        return p[pos++];
    }
    uint16_t u16() {
        if (!need(2)) return 0;
        uint16_t v = uint16_t(p[pos] << 8 | p[pos + 1]);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        if (!need(4)) return 0;
        uint32_t v = uint32_t(p[pos]) << 24 | uint32_t(p[pos + 1]) << 16 |
                     uint32_t(p[pos + 2]) << 8 | uint32_t(p[pos + 3]);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        uint64_t hi = u32();
        return hi << 32 | u32();
    }
    float f32() { return std::bit_cast<float>(u32()); }
    size_t remaining() const { return len - pos; }
};

MsgType type_of(const E3Message& msg) {
    struct Visitor {
        MsgType operator()(const SetupRequest&) { return MsgType::SetupRequest; }
        MsgType operator()(const SetupResponse&) { return MsgType::SetupResponse; }
        MsgType operator()(const SubscriptionRequest&) { return MsgType::SubscriptionRequest; }
        MsgType operator()(const SubscriptionResponse&) { return MsgType::SubscriptionResponse; }
        MsgType operator()(const Indication&) { return MsgType::Indication; }
        MsgType operator()(const Control&) { return MsgType::Control; }
        MsgType operator()(const ErrorIndication&) { return MsgType::ErrorIndication; }
    };
    return std::visit(Visitor{}, msg);
}

void check_status(uint8_t status) {
    if (status > kStatusRejected)
        throw InvariantViolation("status must be 0 (OK) or 1 (REJECTED)");
}

void check_blocklist(const PrbBlocklist& bl) {
    const size_t expect = (size_t(bl.n_prb) + 7) / 8;
    if (bl.bitmap.size() != expect)
        throw InvariantViolation("bitmap length must be ceil(n_prb/8)");
    if (bl.n_prb % 8 != 0 && !bl.bitmap.empty()) {
        const uint8_t pad_mask = uint8_t(0xFFu << (bl.n_prb % 8));
        if (bl.bitmap.back() & pad_mask)
            throw InvariantViolation("bitmap bits at index >= n_prb must be zero");
    }
}

void encode_payload(std::vector<uint8_t>& out, const E3Message& msg) {
    struct Visitor {
        std::vector<uint8_t>& out;

        void operator()(const SetupRequest& m) {
            put_u32(out, m.dapp_id);
            put_u8(out, m.services);
        }
        void operator()(const SetupResponse& m) {
            check_status(m.status);
            put_u32(out, m.dapp_id);
            put_u8(out, m.status);
        }
        void operator()(const SubscriptionRequest& m) {
            const uint8_t svc = uint8_t(m.service);
            if (svc < 1 || svc > 5)
                throw InvariantViolation("service must be in 1..5");
            put_u32(out, m.dapp_id);
            put_u8(out, svc);
            put_u32(out, m.period_us);
        }
        void operator()(const SubscriptionResponse& m) {
            check_status(m.status);
            put_u32(out, m.sub_id);
            put_u8(out, m.status);
        }
        void operator()(const Indication& m) {
            put_u32(out, m.sub_id);
            put_u32(out, m.seq);
            put_u64(out, m.timestamp_us);
            put_u8(out, 1); // payload_kind: IqFrame
            put_u32(out, uint32_t(m.frame.samples.size()));
            for (const Cf32& s : m.frame.samples) {
                put_f32(out, s.i);
                put_f32(out, s.q);
            }
        }
        void operator()(const Control& m) {
            check_blocklist(m.blocklist);
            put_u32(out, m.dapp_id);
            put_u32(out, m.seq);
            put_u8(out, 1); // action: Blocklist
            put_u16(out, m.blocklist.n_prb);
            out.insert(out.end(), m.blocklist.bitmap.begin(), m.blocklist.bitmap.end());
        }
        void operator()(const ErrorIndication& m) { put_u8(out, m.code); }
    };
    std::visit(Visitor{out}, msg);
}

} // namespace

const char* to_string(DecodeErrorKind kind) {
    switch (kind) {
    case DecodeErrorKind::BadMagic: return "BadMagic";
    case DecodeErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case DecodeErrorKind::UnknownMsgType: return "UnknownMsgType";
    case DecodeErrorKind::TruncatedPayload: return "TruncatedPayload";
    case DecodeErrorKind::TrailingBytes: return "TrailingBytes";
    case DecodeErrorKind::InvalidFieldValue: return "InvalidFieldValue";
    }
    return "?";
}

std::vector<uint8_t> encode(const E3Message& msg) {
    std::vector<uint8_t> out;
    out.reserve(kHeaderSize + 32);
    put_u8(out, kMagic);
    put_u8(out, kVersion);
    put_u8(out, uint8_t(type_of(msg)));
    put_u32(out, 0); // payload_len, patched below
    encode_payload(out, msg);
    const uint32_t payload_len = uint32_t(out.size() - kHeaderSize);
    out[3] = uint8_t(payload_len >> 24);
    out[4] = uint8_t(payload_len >> 16);
    out[5] = uint8_t(payload_len >> 8);
    out[6] = uint8_t(payload_len);
    return out;
}

size_t frame_size(std::span<const uint8_t> data) {
    if (data.size() < kHeaderSize) return 0;
    const uint32_t payload_len = uint32_t(data[3]) << 24 | uint32_t(data[4]) << 16 |
                                 uint32_t(data[5]) << 8 | uint32_t(data[6]);
    return kHeaderSize + size_t(payload_len);
}

DecodeResult decode(std::span<const uint8_t> bytes) {
    auto fail = [](DecodeErrorKind kind, std::string detail) {
        return DecodeResult(DecodeError{kind, std::move(detail)});
    };

    if (bytes.empty() || bytes[0] != kMagic)
        return fail(DecodeErrorKind::BadMagic, "expected 0xE3");
    if (bytes.size() < 2 || bytes[1] != kVersion)
        return fail(DecodeErrorKind::UnsupportedVersion, "expected version 0x01");
    if (bytes.size() < kHeaderSize)
        return fail(DecodeErrorKind::TruncatedPayload, "incomplete frame header");

    const uint8_t msg_type = bytes[2];
    const uint32_t payload_len = uint32_t(bytes[3]) << 24 | uint32_t(bytes[4]) << 16 |
                                 uint32_t(bytes[5]) << 8 | uint32_t(bytes[6]);
    if (bytes.size() - kHeaderSize < payload_len)
        return fail(DecodeErrorKind::TruncatedPayload,
                    "header claims " + std::to_string(payload_len) + " payload bytes, got " +
                        std::to_string(bytes.size() - kHeaderSize));
    if (bytes.size() - kHeaderSize > payload_len)
        return fail(DecodeErrorKind::TrailingBytes, "bytes after declared payload");

    Reader r{bytes.data() + kHeaderSize, payload_len};
    E3Message msg;

    switch (MsgType(msg_type)) {
    case MsgType::SetupRequest: {
        SetupRequest m;
        m.dapp_id = r.u32();
        m.services = r.u8();
        msg = m;
        break;
    }
    case MsgType::SetupResponse: {
        SetupResponse m;
        m.dapp_id = r.u32();
        m.status = r.u8();
        if (r.ok && m.status > kStatusRejected)
            return fail(DecodeErrorKind::InvalidFieldValue, "status out of range");
        msg = m;
        break;
    }
    case MsgType::SubscriptionRequest: {
        SubscriptionRequest m;
        m.dapp_id = r.u32();
        const uint8_t svc = r.u8();
        m.period_us = r.u32();
        if (r.ok && (svc < 1 || svc > 5))
            return fail(DecodeErrorKind::InvalidFieldValue, "service out of range");
        m.service = ServiceKind(svc);
        msg = m;
        break;
    }
    case MsgType::SubscriptionResponse: {
        SubscriptionResponse m;
        m.sub_id = r.u32();
        m.status = r.u8();
        if (r.ok && m.status > kStatusRejected)
            return fail(DecodeErrorKind::InvalidFieldValue, "status out of range");
        msg = m;
        break;
    }
    case MsgType::Indication: {
        Indication m;
        m.sub_id = r.u32();
        m.seq = r.u32();
        m.timestamp_us = r.u64();
        const uint8_t kind = r.u8();
        if (r.ok && kind != 1)
            return fail(DecodeErrorKind::InvalidFieldValue, "unknown indication payload_kind");
        const uint32_t n_samples = r.u32();
        if (r.ok && r.remaining() < size_t(n_samples) * 8)
            return fail(DecodeErrorKind::TruncatedPayload, "sample data shorter than n_samples");
        if (r.ok) {
            m.frame.samples.resize(n_samples);
            for (uint32_t i = 0; i < n_samples; i++) {
                m.frame.samples[i].i = r.f32();
                m.frame.samples[i].q = r.f32();
            }
        }
        msg = std::move(m);
        break;
    }
    case MsgType::Control: {
        Control m;
        m.dapp_id = r.u32();
        m.seq = r.u32();
        const uint8_t action = r.u8();
        if (r.ok && action != 1)
            return fail(DecodeErrorKind::InvalidFieldValue, "unknown control action");
        m.blocklist.n_prb = r.u16();
        const size_t bitmap_len = (size_t(m.blocklist.n_prb) + 7) / 8;
        if (r.ok && r.remaining() < bitmap_len)
            return fail(DecodeErrorKind::TruncatedPayload, "bitmap shorter than ceil(n_prb/8)");
        if (r.ok) {
            m.blocklist.bitmap.assign(r.p + r.pos, r.p + r.pos + bitmap_len);
            r.pos += bitmap_len;
            if (m.blocklist.n_prb % 8 != 0 && !m.blocklist.bitmap.empty()) {
                const uint8_t pad_mask = uint8_t(0xFFu << (m.blocklist.n_prb % 8));
                if (m.blocklist.bitmap.back() & pad_mask)
                    return fail(DecodeErrorKind::InvalidFieldValue,
                                "bitmap bits at index >= n_prb set");
            }
        }
        msg = std::move(m);
        break;
    }
    case MsgType::ErrorIndication: {
        ErrorIndication m;
        m.code = r.u8();
        msg = m;
        break;
    }
    default:
        return fail(DecodeErrorKind::UnknownMsgType,
                    "msg_type 0x" + std::to_string(msg_type));
    }

    if (!r.ok)
        return fail(DecodeErrorKind::TruncatedPayload, "payload shorter than message grammar");
    if (r.remaining() != 0)
        return fail(DecodeErrorKind::TrailingBytes, "payload longer than message grammar");
    return DecodeResult(std::move(msg));
}

} // namespace e3
