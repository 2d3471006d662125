#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "util/result.hpp"

// WebAssembly MVP module loading: binary decode, full type validation, and
// conversion of function bodies into a flat pre-decoded instruction form the
// interpreter executes directly (branch targets resolved, stack adjustments
// precomputed). Accepted feature set matches what clang --target=wasm32
// -mcpu=mvp emits, plus sign-extension ops, saturating truncations and
// memory.copy/fill.

namespace sandbox {

enum class ValType : uint8_t {
    I32 = 0x7F,
    I64 = 0x7E,
    F32 = 0x7D,
    F64 = 0x7C,
};

// Host functions a module may import (module "env"). Anything else is a
// ForbiddenImport.
enum class HostFn : uint8_t {
    SockConnect, // (host_ptr:i32, host_len:i32, port:i32) -> i32 fd | -errno
    SockBind,    // (port:i32) -> i32
    SockAccept,  // (fd:i32) -> i32
    SockRead,    // (fd:i32, buf:i32, len:i32) -> i32
    SockWrite,   // (fd:i32, buf:i32, len:i32) -> i32
    SockClose,   // (fd:i32) -> i32
    ClockUs,     // () -> i64 monotonic microseconds
};
inline constexpr size_t kNumHostFns = 7;

const char* host_fn_name(HostFn fn);

// Pre-decoded instruction. op is the wasm opcode byte for 1:1 ops, 0x100|sub
// for 0xFC-prefixed ops, or a synthetic opcode (see kOp* below).
struct Instr {
    uint16_t op;
    uint16_t aux; // branch keep count / call arg count / return result count
    uint32_t a;   // branch target ip / local or global index / mem offset / func index
    uint64_t b;   // const bits / branch drop count / br_table pool index
};

// Synthetic opcodes (outside the wasm one-byte space).
inline constexpr uint16_t kOpBrIfZ = 0x201;    // conditional branch on zero (from `if`)
inline constexpr uint16_t kOpCallHost = 0x202; // a = HostFn id

struct BrTableEntry {
    uint32_t target;
    uint32_t drop;
    uint16_t keep;
};

struct FuncType {
    std::vector<ValType> params;
    std::optional<ValType> result;
    bool operator==(const FuncType&) const = default;
};

struct FuncBody {
    uint32_t type_idx = 0;
    uint32_t n_locals = 0; // params included
    uint32_t max_stack = 0; // operand slots beyond locals
    std::vector<Instr> code;
};

struct ImportedFunc {
    HostFn fn;
    uint32_t type_idx;
};

struct GlobalDef {
    ValType type;
    bool mutable_ = false;
    uint64_t init_bits = 0;
};

struct MemoryDef {
    uint32_t min_pages = 0;
    std::optional<uint32_t> max_pages;
};

struct DataSegment {
    uint32_t offset;
    std::vector<uint8_t> bytes;
};

enum class ExportKind : uint8_t { Func = 0, Table = 1, Memory = 2, Global = 3 };

struct ExportEntry {
    ExportKind kind;
    uint32_t index;
};

enum class LoadErrorKind {
    InvalidBytecode,
    ForbiddenImport,
    InvalidManifest,
};

struct LoadError {
    LoadErrorKind kind;
    std::string detail; // for ForbiddenImport: the offending "module.name"
};

inline constexpr uint32_t kPageSize = 65536;
inline constexpr uint32_t kNoFunc = UINT32_MAX; // uninitialised table slot

class Module {
public:
    static util::Result<std::shared_ptr<const Module>, LoadError>
    parse(std::span<const uint8_t> bytes);

    std::vector<FuncType> types;
    std::vector<ImportedFunc> imported_funcs;
    std::vector<FuncBody> funcs; // local functions; global index = i + imports
    std::vector<GlobalDef> globals;
    MemoryDef memory;
    bool has_memory = false;
    bool has_table = false;
    std::vector<uint32_t> table; // funcref image after element segments
    std::vector<DataSegment> data;
    std::vector<BrTableEntry> br_pool;
    std::map<std::string, ExportEntry, std::less<>> exports;
    std::optional<uint32_t> start_func; // global function index

    const FuncType& type_of_global_index(uint32_t func_idx) const {
        return func_idx < imported_funcs.size()
                   ? types[imported_funcs[func_idx].type_idx]
                   : types[funcs[func_idx - imported_funcs.size()].type_idx];
    }

    const ExportEntry* find_export(std::string_view name, ExportKind kind) const {
        auto it = exports.find(name);
        if (it == exports.end() || it->second.kind != kind) return nullptr;
        return &it->second;
    }
};

} // namespace sandbox
