/* Host environment surface available to dApp guests. The same declarations
 * compile for both targets: as wasm32 imports from module "env" inside the
 * sandbox, and as externs resolved by the in-process shim (native_env.cpp)
 * for the bare-metal baseline build. */

#ifndef DAPP_ENV_H
#define DAPP_ENV_H

#include <stdint.h>

#ifdef __wasm__
#define DAPP_IMPORT(name) __attribute__((import_module("env"), import_name(#name)))
#define DAPP_EXPORT(name) __attribute__((export_name(#name), visibility("default")))
#else
#define DAPP_IMPORT(name)
#define DAPP_EXPORT(name)
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Negative returns mirror POSIX errno numbers. */
#define DAPP_EBADF 9
#define DAPP_EACCES 13
#define DAPP_EFAULT 14
#define DAPP_EINVAL 22
#define DAPP_EPIPE 32
#define DAPP_ECONNREFUSED 111

DAPP_IMPORT(sock_connect)
int32_t env_sock_connect(const char *host, uint32_t host_len, uint32_t port);
DAPP_IMPORT(sock_bind)
int32_t env_sock_bind(uint32_t port);
DAPP_IMPORT(sock_accept)
int32_t env_sock_accept(int32_t listen_fd);
DAPP_IMPORT(sock_read)
int32_t env_sock_read(int32_t fd, void *buf, uint32_t len);
DAPP_IMPORT(sock_write)
int32_t env_sock_write(int32_t fd, const void *buf, uint32_t len);
DAPP_IMPORT(sock_close)
int32_t env_sock_close(int32_t fd);
DAPP_IMPORT(clock_us)
uint64_t env_clock_us(void);

#ifdef __cplusplus
}
#endif

#endif /* DAPP_ENV_H */
