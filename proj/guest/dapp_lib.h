/* Freestanding helpers shared by the guest modules: memory ops, config
 * parsing, big-endian wire accessors and stream IO loops. No libc. */

#ifndef DAPP_LIB_H
#define DAPP_LIB_H

#include "dapp_env.h"

#ifndef DAPP_STATIC
#define DAPP_STATIC static __attribute__((unused))
#endif

DAPP_STATIC void *d_memcpy(void *dst, const void *src, uint32_t n) {
    uint8_t *d = (uint8_t *)dst;
    const uint8_t *s = (const uint8_t *)src;
    while (n--) *d++ = *s++;
    return dst;
}

DAPP_STATIC void *d_memset(void *dst, int c, uint32_t n) {
    uint8_t *d = (uint8_t *)dst;
    while (n--) *d++ = (uint8_t)c;
    return dst;
}

DAPP_STATIC uint32_t d_strlen(const char *s) {
    uint32_t n = 0;
    while (s[n]) n++;
    return n;
}

/* --- config: "key=value\n" pairs written by the host into this buffer --- */

DAPP_STATIC char g_config[4096];

DAPP_EXPORT(dapp_config_ptr)
char *dapp_config_ptr(void) { return g_config; }

/* Copies the value for `key` into out (NUL-terminated). 0 = found. */
DAPP_STATIC int cfg_get(const char *key, char *out, uint32_t out_len) {
    const uint32_t klen = d_strlen(key);
    const char *p = g_config;
    while (*p) {
        const char *line = p;
        while (*p && *p != '\n') p++;
        const char *line_end = p;
        if (*p == '\n') p++;
        uint32_t i = 0;
        while (i < klen && line + i < line_end && line[i] == key[i]) i++;
        if (i == klen && line + i < line_end && line[i] == '=') {
            const char *v = line + klen + 1;
            uint32_t n = (uint32_t)(line_end - v);
            if (n >= out_len) n = out_len - 1;
            d_memcpy(out, v, n);
            out[n] = 0;
            return 0;
        }
    }
    return -1;
}

DAPP_STATIC uint64_t cfg_get_u64(const char *key, uint64_t fallback) {
    char buf[32];
    if (cfg_get(key, buf, sizeof buf) != 0) return fallback;
    uint64_t v = 0;
    const char *p = buf;
    if (!*p) return fallback;
    while (*p >= '0' && *p <= '9') v = v * 10 + (uint64_t)(*p++ - '0');
    return v;
}

/* Decimal [-]digits[.digits]; enough for config values like "6.0". */
DAPP_STATIC double cfg_get_f64(const char *key, double fallback) {
    char buf[48];
    if (cfg_get(key, buf, sizeof buf) != 0) return fallback;
    const char *p = buf;
    int neg = 0;
    if (*p == '-') {
        neg = 1;
        p++;
    }
    double v = 0.0;
    while (*p >= '0' && *p <= '9') v = v * 10.0 + (double)(*p++ - '0');
    if (*p == '.') {
        p++;
        double scale = 0.1;
        while (*p >= '0' && *p <= '9') {
            v += (double)(*p++ - '0') * scale;
            scale *= 0.1;
        }
    }
    return neg ? -v : v;
}

/* --- big-endian wire helpers --- */

DAPP_STATIC void be_put16(uint8_t *p, uint16_t v) {
    p[0] = (uint8_t)(v >> 8);
    p[1] = (uint8_t)v;
}
DAPP_STATIC void be_put32(uint8_t *p, uint32_t v) {
    p[0] = (uint8_t)(v >> 24);
    p[1] = (uint8_t)(v >> 16);
    p[2] = (uint8_t)(v >> 8);
    p[3] = (uint8_t)v;
}
DAPP_STATIC void be_put64(uint8_t *p, uint64_t v) {
    be_put32(p, (uint32_t)(v >> 32));
    be_put32(p + 4, (uint32_t)v);
}
DAPP_STATIC uint16_t be_get16(const uint8_t *p) {
    return (uint16_t)((uint16_t)p[0] << 8 | p[1]);
}
DAPP_STATIC uint32_t be_get32(const uint8_t *p) {
    return (uint32_t)p[0] << 24 | (uint32_t)p[1] << 16 | (uint32_t)p[2] << 8 | p[3];
}
DAPP_STATIC uint64_t be_get64(const uint8_t *p) {
    return (uint64_t)be_get32(p) << 32 | be_get32(p + 4);
}
DAPP_STATIC float be_getf32(const uint8_t *p) {
    union {
        uint32_t u;
        float f;
    } x;
    x.u = be_get32(p);
    return x.f;
}

/* --- stream IO --- */

/* 1 = got n bytes, 0 = clean end of stream before any byte, -1 = error or
 * mid-buffer close. */
DAPP_STATIC int read_exact(int32_t fd, uint8_t *buf, uint32_t n) {
    uint32_t got = 0;
    while (got < n) {
        const int32_t r = env_sock_read(fd, buf + got, n - got);
        if (r == 0) return got == 0 ? 0 : -1;
        if (r < 0) return -1;
        got += (uint32_t)r;
    }
    return 1;
}

DAPP_STATIC int write_all(int32_t fd, const uint8_t *buf, uint32_t n) {
    uint32_t sent = 0;
    while (sent < n) {
        const int32_t r = env_sock_write(fd, buf + sent, n - sent);
        if (r <= 0) return -1;
        sent += (uint32_t)r;
    }
    return 0;
}

/* --- E3-lite frame constants --- */

#define E3_MAGIC 0xE3
#define E3_VERSION 0x01
#define E3_HEADER 7
#define E3_SETUP_REQ 0x01
#define E3_SETUP_RSP 0x02
#define E3_SUB_REQ 0x03
#define E3_SUB_RSP 0x04
#define E3_INDICATION 0x05
#define E3_CONTROL 0x06
#define E3_ERROR 0x07
#define E3_SVC_REPORT 1

DAPP_STATIC void e3_header(uint8_t *p, uint8_t msg_type, uint32_t payload_len) {
    p[0] = E3_MAGIC;
    p[1] = E3_VERSION;
    p[2] = msg_type;
    be_put32(p + 3, payload_len);
}

/* Reads one full frame into buf; returns total frame length, 0 on clean end
 * of stream, -1 on error/overflow. */
DAPP_STATIC int32_t e3_read_frame(int32_t fd, uint8_t *buf, uint32_t buf_len) {
    const int h = read_exact(fd, buf, E3_HEADER);
    if (h <= 0) return h;
    if (buf[0] != E3_MAGIC || buf[1] != E3_VERSION) return -1;
    const uint32_t payload_len = be_get32(buf + 3);
    if (E3_HEADER + payload_len > buf_len) return -1;
    if (payload_len > 0 && read_exact(fd, buf + E3_HEADER, payload_len) != 1) return -1;
    return (int32_t)(E3_HEADER + payload_len);
}

/* --- unsigned decimal formatting (stage log lines) --- */

DAPP_STATIC uint32_t fmt_u64(char *out, uint64_t v) {
    char tmp[24];
    uint32_t n = 0;
    do {
        tmp[n++] = (char)('0' + v % 10);
        v /= 10;
    } while (v);
    for (uint32_t i = 0; i < n; i++) out[i] = tmp[n - 1 - i];
    return n;
}

#endif /* DAPP_LIB_H */
