#include "sandbox/wasm_module.hpp"

#include <algorithm>
#include <array>
#include <cstring>

namespace sandbox {

namespace {

struct ParseFail {
    LoadErrorKind kind;
    std::string detail;
};

[[noreturn]] void fail(std::string detail) {
    throw ParseFail{LoadErrorKind::InvalidBytecode, std::move(detail)};
}

[[noreturn]] void forbidden(std::string name) {
    throw ParseFail{LoadErrorKind::ForbiddenImport, std::move(name)};
}

struct Reader {
    const uint8_t* p;
    size_t len;
    size_t pos = 0;

    size_t remaining() const { return len - pos; }
    bool done() const { return pos == len; }

    uint8_t u8() {
        if (pos >= len) fail("unexpected end of section");
        return p[pos++];
    }

    uint32_t leb_u32() {
        uint32_t v = 0;
        for (int shift = 0; shift < 35; shift += 7) {
            const uint8_t b = u8();
            v |= uint32_t(b & 0x7F) << shift;
            if (!(b & 0x80)) {
                if (shift == 28 && (b & 0x70)) fail("leb u32 overflow");
                return v;
            }
        }
        fail("leb u32 too long");
    }

    uint64_t leb_u64() {
        uint64_t v = 0;
        for (int shift = 0; shift < 70; shift += 7) {
            const uint8_t b = u8();
            v |= uint64_t(b & 0x7F) << shift;
            if (!(b & 0x80)) {
                if (shift == 63 && (b & 0x7E)) fail("leb u64 overflow");
                return v;
            }
        }
        fail("leb u64 too long");
    }

    int32_t leb_s32() {
        int32_t v = 0;
        int shift = 0;
        for (;;) {
            const uint8_t b = u8();
            if (shift < 32) v |= int32_t(uint32_t(b & 0x7F) << shift);
            shift += 7;
            if (!(b & 0x80)) {
                if (shift < 32 && (b & 0x40)) v |= int32_t(~0u << shift);
                if (shift >= 40) fail("leb s32 too long");
                return v;
            }
            if (shift >= 40) fail("leb s32 too long");
        }
    }

    int64_t leb_s64() {
        int64_t v = 0;
        int shift = 0;
        for (;;) {
            const uint8_t b = u8();
            if (shift < 64) v |= int64_t(uint64_t(b & 0x7F) << shift);
            if (!(b & 0x80)) {
                shift += 7;
                if (shift < 64 && (b & 0x40)) v |= int64_t(~0ull << shift);
                return v;
            }
            shift += 7;
            if (shift >= 70) fail("leb s64 too long");
        }
    }

    uint32_t f32_bits() {
        if (remaining() < 4) fail("truncated f32");
        uint32_t v;
        std::memcpy(&v, p + pos, 4);
        pos += 4;
        return v;
    }

    uint64_t f64_bits() {
        if (remaining() < 8) fail("truncated f64");
        uint64_t v;
        std::memcpy(&v, p + pos, 8);
        pos += 8;
        return v;
    }

    std::span<const uint8_t> bytes(size_t n) {
        if (remaining() < n) fail("truncated byte run");
        auto s = std::span<const uint8_t>(p + pos, n);
        pos += n;
        return s;
    }

    std::string name() {
        const uint32_t n = leb_u32();
        if (remaining() < n) fail("truncated name");
        auto s = bytes(n);
        return std::string(reinterpret_cast<const char*>(s.data()), s.size());
    }

    ValType valtype() {
        const uint8_t b = u8();
        switch (b) {
        case 0x7F: return ValType::I32;
        case 0x7E: return ValType::I64;
        case 0x7D: return ValType::F32;
        case 0x7C: return ValType::F64;
        default: fail("unsupported value type");
        }
    }
};

struct HostSig {
    const char* name;
    HostFn id;
    FuncType type;
};

const std::array<HostSig, kNumHostFns>& host_sigs() {
    using V = ValType;
    static const std::array<HostSig, kNumHostFns> sigs = {{
        {"sock_connect", HostFn::SockConnect, {{V::I32, V::I32, V::I32}, V::I32}},
        {"sock_bind", HostFn::SockBind, {{V::I32}, V::I32}},
        {"sock_accept", HostFn::SockAccept, {{V::I32}, V::I32}},
        {"sock_read", HostFn::SockRead, {{V::I32, V::I32, V::I32}, V::I32}},
        {"sock_write", HostFn::SockWrite, {{V::I32, V::I32, V::I32}, V::I32}},
        {"sock_close", HostFn::SockClose, {{V::I32}, V::I32}},
        {"clock_us", HostFn::ClockUs, {{}, V::I64}},
    }};
    return sigs;
}

// Wasm opcode bytes used by the validator beyond simple numerics.
enum : uint8_t {
    OP_UNREACHABLE = 0x00,
    OP_NOP = 0x01,
    OP_BLOCK = 0x02,
    OP_LOOP = 0x03,
    OP_IF = 0x04,
    OP_ELSE = 0x05,
    OP_END = 0x0B,
    OP_BR = 0x0C,
    OP_BR_IF = 0x0D,
    OP_BR_TABLE = 0x0E,
    OP_RETURN = 0x0F,
    OP_CALL = 0x10,
    OP_CALL_INDIRECT = 0x11,
    OP_DROP = 0x1A,
    OP_SELECT = 0x1B,
    OP_LOCAL_GET = 0x20,
    OP_LOCAL_SET = 0x21,
    OP_LOCAL_TEE = 0x22,
    OP_GLOBAL_GET = 0x23,
    OP_GLOBAL_SET = 0x24,
    OP_MEMORY_SIZE = 0x3F,
    OP_MEMORY_GROW = 0x40,
    OP_I32_CONST = 0x41,
    OP_I64_CONST = 0x42,
    OP_F32_CONST = 0x43,
    OP_F64_CONST = 0x44,
};

constexpr uint32_t kNoFixup = UINT32_MAX;
constexpr size_t kMaxValStack = 65536;
constexpr size_t kMaxLocals = 50000;

// Validates one function body and emits pre-decoded instructions.
class FuncBuilder {
public:
    FuncBuilder(Module& mod, Reader& r, FuncBody& out)
        : mod_(mod), r_(r), out_(out) {}

    void run() {
        const FuncType& fty = mod_.types[out_.type_idx];
        locals_ = fty.params;
        const uint32_t n_runs = r_.leb_u32();
        for (uint32_t i = 0; i < n_runs; i++) {
            const uint32_t count = r_.leb_u32();
            const ValType t = r_.valtype();
            if (locals_.size() + count > kMaxLocals) fail("too many locals");
            locals_.insert(locals_.end(), count, t);
        }
        out_.n_locals = uint32_t(locals_.size());

        ctrls_.push_back(Ctrl{OP_BLOCK, fty.result, 0, false, true, 0, {}, kNoFixup});
        while (!ctrls_.empty()) step();
        out_.max_stack = max_stack_;
    }

private:
    struct Ctrl {
        uint8_t opcode; // block / loop / if (else reuses if)
        std::optional<ValType> result;
        uint32_t height;
        bool unreachable;
        bool live; // false when the whole frame sits in dead code
        uint32_t loop_target;
        std::vector<uint32_t> end_fixups;
        uint32_t ifz_fixup;
    };

    Module& mod_;
    Reader& r_;
    FuncBody& out_;
    std::vector<ValType> locals_;
    std::vector<ValType> stack_;
    std::vector<Ctrl> ctrls_;
    uint32_t max_stack_ = 0;

    bool emitting() const { return ctrls_.back().live && !ctrls_.back().unreachable; }

    uint32_t emit(uint16_t op, uint16_t aux = 0, uint32_t a = 0, uint64_t b = 0) {
        if (!emitting()) return kNoFixup;
        out_.code.push_back(Instr{op, aux, a, b});
        return uint32_t(out_.code.size() - 1);
    }

    uint32_t here() const { return uint32_t(out_.code.size()); }

    void push(ValType t) {
        if (stack_.size() >= kMaxValStack) fail("value stack too deep");
        stack_.push_back(t);
        max_stack_ = std::max(max_stack_, uint32_t(stack_.size()));
    }

    std::optional<ValType> pop_any() {
        Ctrl& c = ctrls_.back();
        if (stack_.size() == c.height) {
            if (c.unreachable) return std::nullopt;
            fail("operand stack underflow");
        }
        const ValType t = stack_.back();
        stack_.pop_back();
        return t;
    }

    void pop_expect(ValType want) {
        const auto got = pop_any();
        if (got && *got != want) fail("operand type mismatch");
    }

    void set_unreachable() {
        Ctrl& c = ctrls_.back();
        stack_.resize(c.height);
        c.unreachable = true;
    }

    std::optional<ValType> parse_blocktype() {
        const uint8_t b = r_.u8();
        if (b == 0x40) return std::nullopt;
        switch (b) {
        case 0x7F: return ValType::I32;
        case 0x7E: return ValType::I64;
        case 0x7D: return ValType::F32;
        case 0x7C: return ValType::F64;
        default: fail("unsupported block type (multi-value not accepted)");
        }
    }

    Ctrl& label(uint32_t depth) {
        if (depth >= ctrls_.size()) fail("branch label out of range");
        return ctrls_[ctrls_.size() - 1 - depth];
    }

    // Label arity: loops take no branch values in MVP, blocks carry results.
    uint16_t label_arity(const Ctrl& c) const {
        return (c.opcode != OP_LOOP && c.result) ? 1 : 0;
    }

    // Type-check one branch to `c`. Leaves the stack unchanged.
    void check_br_types(Ctrl& c) {
        if (label_arity(c)) {
            pop_expect(*c.result);
            push(*c.result);
        }
    }

    // Emits a branch; target patched later for forward labels.
    // Precondition: stack discipline already checked for this branch.
    uint32_t emit_br(Ctrl& c) {
        const uint16_t keep = label_arity(c);
        uint32_t drop = 0;
        if (emitting()) {
            // reachable code always satisfies stack >= height + keep here
            drop = uint32_t(stack_.size()) - keep - c.height;
        }
        if (c.opcode == OP_LOOP)
            return emit(OP_BR, keep, c.loop_target, drop);
        const uint32_t at = emit(OP_BR, keep, 0, drop);
        if (at != kNoFixup) c.end_fixups.push_back(at);
        return at;
    }

    // end_fixups tokens: plain code index, or 0x80000000|slot for br_table
    // pool entries.
    static constexpr uint32_t kPoolFixupBit = 0x80000000u;

    void patch_fixup(uint32_t token, uint32_t target) {
        if (token == kNoFixup) return;
        if (token & kPoolFixupBit)
            mod_.br_pool[token & ~kPoolFixupBit].target = target;
        else
            out_.code[token].a = target;
    }

    void patch_target(uint32_t at, uint32_t target) {
        if (at != kNoFixup) out_.code[at].a = target;
    }

    void unop(ValType t) {
        pop_expect(t);
        push(t);
    }
    void binop(ValType t) {
        pop_expect(t);
        pop_expect(t);
        push(t);
    }
    void testop(ValType t) {
        pop_expect(t);
        push(ValType::I32);
    }
    void relop(ValType t) {
        pop_expect(t);
        pop_expect(t);
        push(ValType::I32);
    }
    void cvt(ValType from, ValType to) {
        pop_expect(from);
        push(to);
    }

    uint32_t mem_arg(uint32_t natural_align_log2) {
        const uint32_t align = r_.leb_u32();
        if (align > natural_align_log2) fail("alignment exceeds natural");
        return r_.leb_u32(); // offset
    }

    void check_has_memory() {
        if (!mod_.has_memory) fail("memory instruction without memory");
    }

    void load_op(uint16_t op, ValType t, uint32_t align) {
        check_has_memory();
        const uint32_t off = mem_arg(align);
        pop_expect(ValType::I32);
        push(t);
        emit(op, 0, off);
    }

    void store_op(uint16_t op, ValType t, uint32_t align) {
        check_has_memory();
        const uint32_t off = mem_arg(align);
        pop_expect(t);
        pop_expect(ValType::I32);
        emit(op, 0, off);
    }

    void call_type(const FuncType& fty) {
        for (size_t i = fty.params.size(); i-- > 0;) pop_expect(fty.params[i]);
        if (fty.result) push(*fty.result);
    }

    void step();
};

void FuncBuilder::step() {
    const uint8_t op = r_.u8();
    using V = ValType;

    switch (op) {
    case OP_UNREACHABLE:
        emit(OP_UNREACHABLE);
        set_unreachable();
        break;
    case OP_NOP:
        break;

    case OP_BLOCK: {
        const auto bt = parse_blocktype();
        ctrls_.push_back(Ctrl{OP_BLOCK, bt, uint32_t(stack_.size()), false, emitting(), 0,
                              {}, kNoFixup});
        break;
    }
    case OP_LOOP: {
        const auto bt = parse_blocktype();
        ctrls_.push_back(Ctrl{OP_LOOP, bt, uint32_t(stack_.size()), false, emitting(),
                              here(), {}, kNoFixup});
        break;
    }
    case OP_IF: {
        const auto bt = parse_blocktype();
        pop_expect(V::I32);
        const bool live = emitting();
        const uint32_t fix = emit(kOpBrIfZ, 0, 0, 0);
        ctrls_.push_back(
            Ctrl{OP_IF, bt, uint32_t(stack_.size()), false, live, 0, {}, fix});
        break;
    }
    case OP_ELSE: {
        if (ctrls_.size() < 2 || ctrls_.back().opcode != OP_IF)
            fail("else without if");
        Ctrl& c = ctrls_.back();
        if (c.result) pop_expect(*c.result);
        if (stack_.size() != c.height) fail("stack height at else");
        // jump over the else arm at the end of a taken then-arm
        if (c.live && !c.unreachable) {
            const uint16_t keep = c.result ? 1 : 0;
            const uint32_t at = emit(OP_BR, keep, 0, 0);
            c.end_fixups.push_back(at);
        }
        patch_target(c.ifz_fixup, here());
        c.ifz_fixup = kNoFixup;
        c.opcode = OP_ELSE;
        c.unreachable = false;
        break;
    }
    case OP_END: {
        Ctrl c = ctrls_.back();
        if (c.opcode == OP_IF && c.result)
            fail("if with result type requires else");
        if (c.result) pop_expect(*c.result);
        if (stack_.size() != c.height) fail("stack height at end");
        ctrls_.pop_back();
        if (ctrls_.empty()) {
            // Function frame: always materialise the return so branches to
            // the function label have a target, even after unreachable tails.
            const uint32_t ret_ip = uint32_t(out_.code.size());
            out_.code.push_back(Instr{OP_RETURN, uint16_t(c.result ? 1 : 0), 0, 0});
            for (const uint32_t tok : c.end_fixups) patch_fixup(tok, ret_ip);
            if (!r_.done()) fail("trailing bytes after function body");
            return;
        }
        if (c.result) push(*c.result);
        for (const uint32_t tok : c.end_fixups) patch_fixup(tok, here());
        patch_target(c.ifz_fixup, here());
        break;
    }

    case OP_BR: {
        Ctrl& c = label(r_.leb_u32());
        check_br_types(c);
        emit_br(c);
        set_unreachable();
        break;
    }
    case OP_BR_IF: {
        Ctrl& c = label(r_.leb_u32());
        pop_expect(V::I32);
        check_br_types(c);
        const uint16_t keep = label_arity(c);
        uint32_t drop = 0;
        if (emitting()) drop = uint32_t(stack_.size()) - keep - c.height;
        if (c.opcode == OP_LOOP) {
            emit(OP_BR_IF, keep, c.loop_target, drop);
        } else {
            const uint32_t at = emit(OP_BR_IF, keep, 0, drop);
            if (at != kNoFixup) c.end_fixups.push_back(at);
        }
        break;
    }
    case OP_BR_TABLE: {
        const uint32_t n_labels = r_.leb_u32();
        if (n_labels > r_.remaining()) fail("br_table label count");
        std::vector<uint32_t> depths(n_labels + 1);
        for (uint32_t i = 0; i < n_labels; i++) depths[i] = r_.leb_u32();
        depths[n_labels] = r_.leb_u32(); // default
        pop_expect(V::I32);

        const uint16_t arity = label_arity(label(depths[n_labels]));
        for (const uint32_t d : depths) {
            if (label_arity(label(d)) != arity) fail("br_table arity mismatch");
            if (arity && *label(d).result != *label(depths[n_labels]).result)
                fail("br_table result type mismatch");
        }
        if (arity) {
            pop_expect(*label(depths[n_labels]).result);
            push(*label(depths[n_labels]).result);
        }

        if (emitting()) {
            const uint32_t pool_at = uint32_t(mod_.br_pool.size());
            for (const uint32_t d : depths) {
                Ctrl& c = label(d);
                const uint32_t drop = uint32_t(stack_.size()) - arity - c.height;
                BrTableEntry e{0, drop, arity};
                if (c.opcode == OP_LOOP) {
                    e.target = c.loop_target;
                    mod_.br_pool.push_back(e);
                } else {
                    mod_.br_pool.push_back(e);
                    // fixup via sentinel: record pool slot in the frame
                    c.end_fixups.push_back(0x80000000u | uint32_t(mod_.br_pool.size() - 1));
                }
            }
            emit(OP_BR_TABLE, 0, pool_at, n_labels);
        }
        set_unreachable();
        break;
    }
    case OP_RETURN: {
        const auto& fres = ctrls_.front().result;
        if (fres) {
            pop_expect(*fres);
            push(*fres);
        }
        emit(OP_RETURN, fres ? 1 : 0);
        set_unreachable();
        break;
    }
    case OP_CALL: {
        const uint32_t idx = r_.leb_u32();
        const uint32_t n_imports = uint32_t(mod_.imported_funcs.size());
        if (idx >= n_imports + mod_.funcs.size()) fail("call to unknown function");
        const FuncType& fty = mod_.type_of_global_index(idx);
        call_type(fty);
        if (idx < n_imports)
            emit(kOpCallHost, uint16_t(fty.params.size()),
                 uint32_t(mod_.imported_funcs[idx].fn));
        else
            emit(OP_CALL, 0, idx - n_imports);
        break;
    }
    case OP_CALL_INDIRECT: {
        const uint32_t type_idx = r_.leb_u32();
        if (type_idx >= mod_.types.size()) fail("call_indirect unknown type");
        if (r_.u8() != 0x00) fail("call_indirect table index must be 0");
        if (!mod_.has_table) fail("call_indirect without table");
        pop_expect(V::I32);
        call_type(mod_.types[type_idx]);
        emit(OP_CALL_INDIRECT, 0, type_idx);
        break;
    }

    case OP_DROP:
        pop_any();
        emit(OP_DROP);
        break;
    case OP_SELECT: {
        pop_expect(V::I32);
        const auto t2 = pop_any();
        const auto t1 = pop_any();
        if (t1 && t2 && *t1 != *t2) fail("select operand mismatch");
        if (t1) push(*t1);
        else if (t2) push(*t2);
        else {
            // both polymorphic: result stays polymorphic; push a placeholder
            // that can never be observed (frame is unreachable)
            push(V::I32);
        }
        emit(OP_SELECT);
        break;
    }

    case OP_LOCAL_GET: {
        const uint32_t i = r_.leb_u32();
        if (i >= locals_.size()) fail("local index out of range");
        push(locals_[i]);
        emit(OP_LOCAL_GET, 0, i);
        break;
    }
    case OP_LOCAL_SET: {
        const uint32_t i = r_.leb_u32();
        if (i >= locals_.size()) fail("local index out of range");
        pop_expect(locals_[i]);
        emit(OP_LOCAL_SET, 0, i);
        break;
    }
    case OP_LOCAL_TEE: {
        const uint32_t i = r_.leb_u32();
        if (i >= locals_.size()) fail("local index out of range");
        pop_expect(locals_[i]);
        push(locals_[i]);
        emit(OP_LOCAL_TEE, 0, i);
        break;
    }
    case OP_GLOBAL_GET: {
        const uint32_t i = r_.leb_u32();
        if (i >= mod_.globals.size()) fail("global index out of range");
        push(mod_.globals[i].type);
        emit(OP_GLOBAL_GET, 0, i);
        break;
    }
    case OP_GLOBAL_SET: {
        const uint32_t i = r_.leb_u32();
        if (i >= mod_.globals.size()) fail("global index out of range");
        if (!mod_.globals[i].mutable_) fail("assignment to immutable global");
        pop_expect(mod_.globals[i].type);
        emit(OP_GLOBAL_SET, 0, i);
        break;
    }

    // loads
    case 0x28: load_op(op, V::I32, 2); break;
    case 0x29: load_op(op, V::I64, 3); break;
    case 0x2A: load_op(op, V::F32, 2); break;
    case 0x2B: load_op(op, V::F64, 3); break;
    case 0x2C: case 0x2D: load_op(op, V::I32, 0); break;
    case 0x2E: case 0x2F: load_op(op, V::I32, 1); break;
    case 0x30: case 0x31: load_op(op, V::I64, 0); break;
    case 0x32: case 0x33: load_op(op, V::I64, 1); break;
    case 0x34: case 0x35: load_op(op, V::I64, 2); break;
    // stores
    case 0x36: store_op(op, V::I32, 2); break;
    case 0x37: store_op(op, V::I64, 3); break;
    case 0x38: store_op(op, V::F32, 2); break;
    case 0x39: store_op(op, V::F64, 3); break;
    case 0x3A: store_op(op, V::I32, 0); break;
    case 0x3B: store_op(op, V::I32, 1); break;
    case 0x3C: store_op(op, V::I64, 0); break;
    case 0x3D: store_op(op, V::I64, 1); break;
    case 0x3E: store_op(op, V::I64, 2); break;

    case OP_MEMORY_SIZE:
        check_has_memory();
        if (r_.u8() != 0x00) fail("memory.size immediate");
        push(V::I32);
        emit(op);
        break;
    case OP_MEMORY_GROW:
        check_has_memory();
        if (r_.u8() != 0x00) fail("memory.grow immediate");
        pop_expect(V::I32);
        push(V::I32);
        emit(op);
        break;

    case OP_I32_CONST: {
        const int32_t v = r_.leb_s32();
        push(V::I32);
        emit(op, 0, 0, uint64_t(uint32_t(v)));
        break;
    }
    case OP_I64_CONST: {
        const int64_t v = r_.leb_s64();
        push(V::I64);
        emit(op, 0, 0, uint64_t(v));
        break;
    }
    case OP_F32_CONST: {
        const uint32_t bits = r_.f32_bits();
        push(V::F32);
        emit(op, 0, 0, bits);
        break;
    }
    case OP_F64_CONST: {
        const uint64_t bits = r_.f64_bits();
        push(V::F64);
        emit(op, 0, 0, bits);
        break;
    }

    // i32 compare
    case 0x45: testop(V::I32); emit(op); break;
    case 0x46: case 0x47: case 0x48: case 0x49: case 0x4A: case 0x4B:
    case 0x4C: case 0x4D: case 0x4E: case 0x4F:
        relop(V::I32); emit(op); break;
    // i64 compare
    case 0x50: testop(V::I64); emit(op); break;
    case 0x51: case 0x52: case 0x53: case 0x54: case 0x55: case 0x56:
    case 0x57: case 0x58: case 0x59: case 0x5A:
        relop(V::I64); emit(op); break;
    // f32 / f64 compare
    case 0x5B: case 0x5C: case 0x5D: case 0x5E: case 0x5F: case 0x60:
        relop(V::F32); emit(op); break;
    case 0x61: case 0x62: case 0x63: case 0x64: case 0x65: case 0x66:
        relop(V::F64); emit(op); break;

    // i32 arithmetic
    case 0x67: case 0x68: case 0x69: unop(V::I32); emit(op); break;
    case 0x6A: case 0x6B: case 0x6C: case 0x6D: case 0x6E: case 0x6F:
    case 0x70: case 0x71: case 0x72: case 0x73: case 0x74: case 0x75:
    case 0x76: case 0x77: case 0x78:
        binop(V::I32); emit(op); break;
    // i64 arithmetic
    case 0x79: case 0x7A: case 0x7B: unop(V::I64); emit(op); break;
    case 0x7C: case 0x7D: case 0x7E: case 0x7F: case 0x80: case 0x81:
    case 0x82: case 0x83: case 0x84: case 0x85: case 0x86: case 0x87:
    case 0x88: case 0x89: case 0x8A:
        binop(V::I64); emit(op); break;
    // f32 arithmetic
    case 0x8B: case 0x8C: case 0x8D: case 0x8E: case 0x8F: case 0x90: case 0x91:
        unop(V::F32); emit(op); break;
    case 0x92: case 0x93: case 0x94: case 0x95: case 0x96: case 0x97: case 0x98:
        binop(V::F32); emit(op); break;
    // f64 arithmetic
    case 0x99: case 0x9A: case 0x9B: case 0x9C: case 0x9D: case 0x9E: case 0x9F:
        unop(V::F64); emit(op); break;
    case 0xA0: case 0xA1: case 0xA2: case 0xA3: case 0xA4: case 0xA5: case 0xA6:
        binop(V::F64); emit(op); break;

    // conversions
    case 0xA7: cvt(V::I64, V::I32); emit(op); break;
    case 0xA8: case 0xA9: cvt(V::F32, V::I32); emit(op); break;
    case 0xAA: case 0xAB: cvt(V::F64, V::I32); emit(op); break;
    case 0xAC: case 0xAD: cvt(V::I32, V::I64); emit(op); break;
    case 0xAE: case 0xAF: cvt(V::F32, V::I64); emit(op); break;
    case 0xB0: case 0xB1: cvt(V::F64, V::I64); emit(op); break;
    case 0xB2: case 0xB3: cvt(V::I32, V::F32); emit(op); break;
    case 0xB4: case 0xB5: cvt(V::I64, V::F32); emit(op); break;
    case 0xB6: cvt(V::F64, V::F32); emit(op); break;
    case 0xB7: case 0xB8: cvt(V::I32, V::F64); emit(op); break;
    case 0xB9: case 0xBA: cvt(V::I64, V::F64); emit(op); break;
    case 0xBB: cvt(V::F32, V::F64); emit(op); break;
    case 0xBC: cvt(V::F32, V::I32); emit(op); break;
    case 0xBD: cvt(V::F64, V::I64); emit(op); break;
    case 0xBE: cvt(V::I32, V::F32); emit(op); break;
    case 0xBF: cvt(V::I64, V::F64); emit(op); break;

    // sign extension
    case 0xC0: case 0xC1: unop(V::I32); emit(op); break;
    case 0xC2: case 0xC3: case 0xC4: unop(V::I64); emit(op); break;

    case 0xFC: {
        const uint32_t sub = r_.leb_u32();
        const uint16_t xop = uint16_t(0x100 | sub);
        switch (sub) {
        case 0: case 1: cvt(V::F32, V::I32); emit(xop); break;
        case 2: case 3: cvt(V::F64, V::I32); emit(xop); break;
        case 4: case 5: cvt(V::F32, V::I64); emit(xop); break;
        case 6: case 7: cvt(V::F64, V::I64); emit(xop); break;
        case 10: // memory.copy
            check_has_memory();
            if (r_.u8() != 0x00 || r_.u8() != 0x00) fail("memory.copy immediates");
            pop_expect(V::I32);
            pop_expect(V::I32);
            pop_expect(V::I32);
            emit(xop);
            break;
        case 11: // memory.fill
            check_has_memory();
            if (r_.u8() != 0x00) fail("memory.fill immediate");
            pop_expect(V::I32);
            pop_expect(V::I32);
            pop_expect(V::I32);
            emit(xop);
            break;
        default: fail("unsupported 0xFC opcode");
        }
        break;
    }

    default:
        fail("unsupported opcode 0x" + std::to_string(op));
    }
}

} // namespace

const char* host_fn_name(HostFn fn) {
    return host_sigs()[size_t(fn)].name;
}

util::Result<std::shared_ptr<const Module>, LoadError>
Module::parse(std::span<const uint8_t> bytes) {
    using R = util::Result<std::shared_ptr<const Module>, LoadError>;
    auto mod = std::make_shared<Module>();

    try {
        Reader r{bytes.data(), bytes.size()};
        if (r.remaining() < 8) fail("file shorter than wasm header");
        static const uint8_t magic[8] = {0x00, 0x61, 0x73, 0x6D, 0x01, 0x00, 0x00, 0x00};
        if (std::memcmp(bytes.data(), magic, 8) != 0) fail("bad wasm magic/version");
        r.pos = 8;

        std::vector<uint32_t> func_type_idx; // function section contents
        std::vector<std::pair<uint32_t, std::span<const uint8_t>>> bodies;
        int last_section = 0;

        while (!r.done()) {
            const uint8_t section_id = r.u8();
            const uint32_t section_len = r.leb_u32();
            if (r.remaining() < section_len) fail("section length past end of file");
            Reader s{r.p + r.pos, section_len};
            r.pos += section_len;

            if (section_id == 0) continue; // custom sections skipped
            if (section_id != 12 && section_id <= last_section)
                fail("sections out of order");
            if (section_id > 12) fail("unknown section id");
            if (section_id != 12) last_section = section_id;

            switch (section_id) {
            case 1: { // types
                const uint32_t n = s.leb_u32();
                if (n > s.remaining()) fail("type count");
                for (uint32_t i = 0; i < n; i++) {
                    if (s.u8() != 0x60) fail("expected func type");
                    FuncType t;
                    const uint32_t np = s.leb_u32();
                    if (np > s.remaining()) fail("param count");
                    for (uint32_t j = 0; j < np; j++) t.params.push_back(s.valtype());
                    const uint32_t nr = s.leb_u32();
                    if (nr > 1) fail("multi-value results not accepted");
                    if (nr == 1) t.result = s.valtype();
                    mod->types.push_back(std::move(t));
                }
                break;
            }
            case 2: { // imports
                const uint32_t n = s.leb_u32();
                if (n > s.remaining()) fail("import count");
                for (uint32_t i = 0; i < n; i++) {
                    const std::string module_name = s.name();
                    const std::string field = s.name();
                    const uint8_t kind = s.u8();
                    if (kind != 0x00) forbidden(module_name + "." + field);
                    const uint32_t type_idx = s.leb_u32();
                    if (type_idx >= mod->types.size()) fail("import type index");
                    if (module_name != "env") forbidden(module_name + "." + field);
                    const HostSig* match = nullptr;
                    for (const auto& sig : host_sigs())
                        if (field == sig.name) match = &sig;
                    if (!match) forbidden(module_name + "." + field);
                    if (!(mod->types[type_idx] == match->type))
                        fail("host import signature mismatch for " + field);
                    mod->imported_funcs.push_back(ImportedFunc{match->id, type_idx});
                }
                break;
            }
            case 3: { // functions
                const uint32_t n = s.leb_u32();
                if (n > s.remaining()) fail("function count");
                for (uint32_t i = 0; i < n; i++) {
                    const uint32_t t = s.leb_u32();
                    if (t >= mod->types.size()) fail("function type index");
                    func_type_idx.push_back(t);
                }
                break;
            }
            case 4: { // table
                const uint32_t n = s.leb_u32();
                if (n > 1) fail("at most one table");
                if (n == 1) {
                    if (s.u8() != 0x70) fail("table element type must be funcref");
                    const uint8_t flags = s.u8();
                    const uint32_t min = s.leb_u32();
                    if (flags == 0x01) (void)s.leb_u32();
                    else if (flags != 0x00) fail("table limit flags");
                    if (min > 1u << 20) fail("table too large");
                    mod->table.assign(min, kNoFunc);
                    mod->has_table = true;
                }
                break;
            }
            case 5: { // memory
                const uint32_t n = s.leb_u32();
                if (n > 1) fail("at most one memory");
                if (n == 1) {
                    const uint8_t flags = s.u8();
                    mod->memory.min_pages = s.leb_u32();
                    if (flags == 0x01) mod->memory.max_pages = s.leb_u32();
                    else if (flags != 0x00) fail("memory limit flags");
                    if (mod->memory.max_pages &&
                        *mod->memory.max_pages < mod->memory.min_pages)
                        fail("memory max below min");
                    mod->has_memory = true;
                }
                break;
            }
            case 6: { // globals
                const uint32_t n = s.leb_u32();
                if (n > s.remaining()) fail("global count");
                for (uint32_t i = 0; i < n; i++) {
                    GlobalDef g;
                    g.type = s.valtype();
                    const uint8_t mut = s.u8();
                    if (mut > 1) fail("global mutability flag");
                    g.mutable_ = mut == 1;
                    const uint8_t init_op = s.u8();
                    switch (init_op) {
                    case OP_I32_CONST:
                        if (g.type != ValType::I32) fail("global init type");
                        g.init_bits = uint64_t(uint32_t(s.leb_s32()));
                        break;
                    case OP_I64_CONST:
                        if (g.type != ValType::I64) fail("global init type");
                        g.init_bits = uint64_t(s.leb_s64());
                        break;
                    case OP_F32_CONST:
                        if (g.type != ValType::F32) fail("global init type");
                        g.init_bits = s.f32_bits();
                        break;
                    case OP_F64_CONST:
                        if (g.type != ValType::F64) fail("global init type");
                        g.init_bits = s.f64_bits();
                        break;
                    default: fail("unsupported global init expression");
                    }
                    if (s.u8() != OP_END) fail("global init missing end");
                    mod->globals.push_back(g);
                }
                break;
            }
            case 7: { // exports
                const uint32_t n = s.leb_u32();
                if (n > s.remaining()) fail("export count");
                for (uint32_t i = 0; i < n; i++) {
                    const std::string name = s.name();
                    const uint8_t kind = s.u8();
                    const uint32_t index = s.leb_u32();
                    if (kind > 3) fail("export kind");
                    if (mod->exports.contains(name)) fail("duplicate export " + name);
                    mod->exports[name] = ExportEntry{ExportKind(kind), index};
                }
                break;
            }
            case 8: { // start
                mod->start_func = s.leb_u32();
                break;
            }
            case 9: { // elements
                const uint32_t n = s.leb_u32();
                if (n > s.remaining()) fail("element segment count");
                for (uint32_t i = 0; i < n; i++) {
                    if (s.leb_u32() != 0) fail("element segment table index");
                    if (s.u8() != OP_I32_CONST) fail("element offset expression");
                    const int32_t off = s.leb_s32();
                    if (s.u8() != OP_END) fail("element offset missing end");
                    const uint32_t cnt = s.leb_u32();
                    if (cnt > s.remaining()) fail("element count");
                    if (off < 0 || uint64_t(off) + cnt > mod->table.size())
                        fail("element segment out of table bounds");
                    for (uint32_t j = 0; j < cnt; j++)
                        mod->table[uint32_t(off) + j] = s.leb_u32();
                }
                break;
            }
            case 10: { // code
                const uint32_t n = s.leb_u32();
                if (n != func_type_idx.size())
                    fail("code count differs from function count");
                for (uint32_t i = 0; i < n; i++) {
                    const uint32_t body_len = s.leb_u32();
                    bodies.emplace_back(func_type_idx[i], s.bytes(body_len));
                }
                break;
            }
            case 11: { // data
                const uint32_t n = s.leb_u32();
                if (n > s.remaining()) fail("data segment count");
                for (uint32_t i = 0; i < n; i++) {
                    if (s.leb_u32() != 0) fail("data segment memory index");
                    if (s.u8() != OP_I32_CONST) fail("data offset expression");
                    const int32_t off = s.leb_s32();
                    if (s.u8() != OP_END) fail("data offset missing end");
                    const uint32_t len = s.leb_u32();
                    auto seg = s.bytes(len);
                    if (off < 0 ||
                        uint64_t(off) + len > uint64_t(mod->memory.min_pages) * kPageSize)
                        fail("data segment outside initial memory");
                    mod->data.push_back(DataSegment{
                        uint32_t(off), std::vector<uint8_t>(seg.begin(), seg.end())});
                }
                break;
            }
            case 12: // data count (bulk memory); value unused
                (void)s.leb_u32();
                break;
            default:
                fail("unknown section");
            }
        }

        if (bodies.size() != func_type_idx.size())
            fail("function and code section sizes differ");
        mod->funcs.resize(bodies.size());
        for (size_t i = 0; i < bodies.size(); i++)
            mod->funcs[i].type_idx = bodies[i].first;

        // function index sanity for table entries and start
        const uint32_t total_funcs =
            uint32_t(mod->imported_funcs.size() + func_type_idx.size());
        for (const uint32_t f : mod->table)
            if (f != kNoFunc && f >= total_funcs) fail("table entry out of range");
        if (mod->start_func) {
            if (*mod->start_func >= total_funcs) fail("start function out of range");
            const FuncType& t = mod->type_of_global_index(*mod->start_func);
            if (!t.params.empty() || t.result) fail("start function must be [] -> []");
        }
        for (const auto& [name, e] : mod->exports) {
            switch (e.kind) {
            case ExportKind::Func:
                if (e.index >= total_funcs) fail("exported function out of range");
                break;
            case ExportKind::Memory:
                if (e.index != 0 || !mod->has_memory) fail("exported memory out of range");
                break;
            case ExportKind::Table:
                if (e.index != 0 || !mod->has_table) fail("exported table out of range");
                break;
            case ExportKind::Global:
                if (e.index >= mod->globals.size()) fail("exported global out of range");
                break;
            }
        }

        // validate and pre-decode bodies
        for (size_t i = 0; i < bodies.size(); i++) {
            Reader br{bodies[i].second.data(), bodies[i].second.size()};
            FuncBuilder fb(*mod, br, mod->funcs[i]);
            fb.run();
        }
    } catch (const ParseFail& e) {
        return R(LoadError{e.kind, e.detail});
    }

    return R(std::shared_ptr<const Module>(std::move(mod)));
}

} // namespace sandbox
