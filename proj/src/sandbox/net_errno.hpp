#pragma once

#include <cstdint>

// errno values crossing the guest boundary mirror POSIX numbers. The guest-side
// header (guest/dapp_env.h) repeats these; keep the two lists in sync.

namespace sandbox {

inline constexpr int32_t kErrBadFd = 9;        // EBADF
inline constexpr int32_t kErrAgain = 11;       // EAGAIN (internal, non-blocking reads)
inline constexpr int32_t kErrAccess = 13;      // EACCES
inline constexpr int32_t kErrFault = 14;       // EFAULT
inline constexpr int32_t kErrInval = 22;       // EINVAL
inline constexpr int32_t kErrPipe = 32;        // EPIPE
inline constexpr int32_t kErrAddrInUse = 98;   // EADDRINUSE
inline constexpr int32_t kErrConnRefused = 111; // ECONNREFUSED

} // namespace sandbox
