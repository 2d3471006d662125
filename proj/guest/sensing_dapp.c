/* Reference spectrum-sensing dApp.
 *
 * Registers with the E3 agent, subscribes to report indications, and answers
 * each I/Q frame with a PRB blocklist control: radix-2 FFT, mean |X[k]|^2 per
 * PRB, median noise floor, threshold margin in dB. One source, two builds:
 * wasm32 module for the sandboxed arm and native object for the bare-metal
 * baseline; the f64 pipeline is written so both emit bit-identical controls.
 *
 * Config keys (see dapp_lib.h for the transport): agent_host, agent_port,
 * dapp_id, fft_size, n_prb, threshold_db, period_us, stage_log, stage_host,
 * stage_port, stage_stream.
 *
 * Exit codes: 0 clean stream end, 2 setup/subscription rejected, 3 connect
 * failure.
 */

#include "dapp_env.h"
#include "dapp_lib.h"
#include "dapp_math.h"

#define MAX_FFT 4096u
#define MAX_PRB 512u
#define MAX_FRAME (E3_HEADER + 21u + 8u * MAX_FFT)
#define STAGE_BUF 65536u

static double g_re[MAX_FFT];
static double g_im[MAX_FFT];
static double g_tw_re[MAX_FFT / 2];
static double g_tw_im[MAX_FFT / 2];
static uint32_t g_tw_n; /* size the twiddle tables were built for */
static double g_energy[MAX_PRB];
static double g_sorted[MAX_PRB];
static uint8_t g_frame[MAX_FRAME];
static uint8_t g_out[E3_HEADER + 11u + MAX_PRB / 8];
static char g_stage[STAGE_BUF];
static uint32_t g_stage_len;

/* Unnormalized forward DFT, in place, n a power of two (<= MAX_FFT).
 * Returns 0, or -1 for an invalid size. */
DAPP_EXPORT(dapp_fft)
int32_t dapp_fft(double *re, double *im, uint32_t n) {
    if (n == 0 || n > MAX_FFT || (n & (n - 1)) != 0) return -1;

    if (g_tw_n != n) {
        for (uint32_t k = 0; k < n / 2; k++) {
            const double ang = -2.0 * D_PI * (double)k / (double)n;
            g_tw_re[k] = d_cos(ang);
            g_tw_im[k] = d_sin(ang);
        }
        g_tw_n = n;
    }

    /* bit-reversal permutation */
    for (uint32_t i = 1, j = 0; i < n; i++) {
        uint32_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j |= bit;
        if (i < j) {
            double t = re[i];
            re[i] = re[j];
            re[j] = t;
            t = im[i];
            im[i] = im[j];
            im[j] = t;
        }
    }

    for (uint32_t len = 2; len <= n; len <<= 1) {
        const uint32_t half = len >> 1;
        const uint32_t step = n / len;
        for (uint32_t base = 0; base < n; base += len) {
            for (uint32_t j = 0; j < half; j++) {
                const double wr = g_tw_re[j * step];
                const double wi = g_tw_im[j * step];
                const uint32_t a = base + j;
                const uint32_t b = a + half;
                const double xr = re[b] * wr - im[b] * wi;
                const double xi = re[b] * wi + im[b] * wr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] = re[a] + xr;
                im[a] = im[a] + xi;
            }
        }
    }
    return 0;
}

/* Occupancy decision over the frame already loaded into g_re/g_im.
 * Fills bitmap_out (LSB-first bit order) and returns the occupied count. */
static int32_t sense_core(uint32_t fft_size, uint32_t n_prb, double threshold_db,
                          uint8_t *bitmap_out) {
    if (n_prb == 0 || n_prb > MAX_PRB || fft_size % n_prb != 0) return -2;
    if (dapp_fft(g_re, g_im, fft_size) != 0) return -2;

    const uint32_t bins = fft_size / n_prb;
    for (uint32_t p = 0; p < n_prb; p++) {
        double acc = 0.0;
        const uint32_t b0 = p * bins;
        for (uint32_t k = 0; k < bins; k++) {
            const double xr = g_re[b0 + k];
            const double xi = g_im[b0 + k];
            acc += xr * xr + xi * xi;
        }
        g_energy[p] = acc / (double)bins;
    }

    /* median noise floor (insertion sort; n_prb is small) */
    for (uint32_t i = 0; i < n_prb; i++) {
        const double v = g_energy[i];
        uint32_t j = i;
        while (j > 0 && g_sorted[j - 1] > v) {
            g_sorted[j] = g_sorted[j - 1];
            j--;
        }
        g_sorted[j] = v;
    }
    double floor_est = (n_prb & 1)
                           ? g_sorted[n_prb / 2]
                           : 0.5 * (g_sorted[n_prb / 2 - 1] + g_sorted[n_prb / 2]);
    /* noiseless frames still carry f32 wire quantization (~1e-16 of the peak
     * energy) off the tone bins; clamp the floor so numerical zeros never
     * count as signal */
    const double numerical_zero = g_sorted[n_prb - 1] * 1e-12;
    if (floor_est < numerical_zero) floor_est = numerical_zero;
    const double gate = floor_est * d_pow10(threshold_db / 10.0);

    const uint32_t bitmap_len = (n_prb + 7) / 8;
    d_memset(bitmap_out, 0, bitmap_len);
    int32_t occupied = 0;
    for (uint32_t p = 0; p < n_prb; p++) {
        if (g_energy[p] > gate) {
            bitmap_out[p / 8] |= (uint8_t)(1u << (p % 8));
            occupied++;
        }
    }
    return occupied;
}

/* Sensing entry for host-side tests and the native arm: samples as (i, q)
 * float pairs. Returns occupied-PRB count, -1 when n_samples != fft_size,
 * -2 for invalid sizes. */
DAPP_EXPORT(dapp_sense)
int32_t dapp_sense(const float *iq_pairs, uint32_t n_samples, uint32_t fft_size,
                   uint32_t n_prb, double threshold_db, uint8_t *bitmap_out) {
    if (fft_size == 0 || fft_size > MAX_FFT || (fft_size & (fft_size - 1)) != 0)
        return -2;
    if (n_samples != fft_size) return -1;
    for (uint32_t i = 0; i < fft_size; i++) {
        g_re[i] = (double)iq_pairs[2 * i];
        g_im[i] = (double)iq_pairs[2 * i + 1];
    }
    return sense_core(fft_size, n_prb, threshold_db, bitmap_out);
}

/* --- control loop --- */

struct stage_clock {
    uint64_t t0, t1, t2, t3, t4;
};

static void stage_append(uint32_t seq, const struct stage_clock *t) {
    if (g_stage_len + 128 > STAGE_BUF) return; /* keep the tail, drop overflow */
    char *p = g_stage + g_stage_len;
    uint32_t n = 0;
    n += fmt_u64(p + n, seq);
    p[n++] = ',';
    n += fmt_u64(p + n, t->t1 - t->t0);
    p[n++] = ',';
    n += fmt_u64(p + n, t->t2 - t->t1);
    p[n++] = ',';
    n += fmt_u64(p + n, t->t3 - t->t2);
    p[n++] = ',';
    n += fmt_u64(p + n, t->t4 - t->t3);
    p[n++] = ',';
    n += fmt_u64(p + n, t->t4 - t->t0);
    p[n++] = '\n';
    g_stage_len += n;
}

static int32_t flush_stage_log(const char *host, uint32_t port) {
    if (g_stage_len == 0) return 0;
    const int32_t fd = env_sock_connect(host, d_strlen(host), port);
    if (fd < 0) return fd;
    write_all(fd, (const uint8_t *)g_stage, g_stage_len);
    env_sock_close(fd);
    g_stage_len = 0;
    return 0;
}

DAPP_EXPORT(dapp_main)
int32_t dapp_main(void) {
    char agent_host[64] = "agent";
    char stage_host[64] = "stagesink";
    cfg_get("agent_host", agent_host, sizeof agent_host);
    cfg_get("stage_host", stage_host, sizeof stage_host);
    const uint32_t agent_port = (uint32_t)cfg_get_u64("agent_port", 9300);
    const uint32_t dapp_id = (uint32_t)cfg_get_u64("dapp_id", 1);
    const uint32_t fft_size = (uint32_t)cfg_get_u64("fft_size", 1024);
    const uint32_t n_prb = (uint32_t)cfg_get_u64("n_prb", 64);
    const double threshold_db = cfg_get_f64("threshold_db", 6.0);
    const uint32_t period_us = (uint32_t)cfg_get_u64("period_us", 10000);
    const uint32_t stage_log = (uint32_t)cfg_get_u64("stage_log", 0);
    const uint32_t stage_stream = (uint32_t)cfg_get_u64("stage_stream", 0);
    const uint32_t stage_port = (uint32_t)cfg_get_u64("stage_port", 9400);

    g_tw_n = 0;
    g_stage_len = 0;

    const int32_t fd = env_sock_connect(agent_host, d_strlen(agent_host), agent_port);
    if (fd < 0) return 3;

    /* setup */
    e3_header(g_out, E3_SETUP_REQ, 5);
    be_put32(g_out + E3_HEADER, dapp_id);
    g_out[E3_HEADER + 4] = 0x01; /* services: report */
    if (write_all(fd, g_out, E3_HEADER + 5) != 0) return 3;
    int32_t n = e3_read_frame(fd, g_frame, sizeof g_frame);
    if (n < (int32_t)(E3_HEADER + 5) || g_frame[2] != E3_SETUP_RSP ||
        g_frame[E3_HEADER + 4] != 0) {
        env_sock_close(fd);
        return 2;
    }

    /* subscribe to report indications */
    e3_header(g_out, E3_SUB_REQ, 9);
    be_put32(g_out + E3_HEADER, dapp_id);
    g_out[E3_HEADER + 4] = E3_SVC_REPORT;
    be_put32(g_out + E3_HEADER + 5, period_us);
    if (write_all(fd, g_out, E3_HEADER + 9) != 0) return 3;
    n = e3_read_frame(fd, g_frame, sizeof g_frame);
    if (n < (int32_t)(E3_HEADER + 5) || g_frame[2] != E3_SUB_RSP ||
        g_frame[E3_HEADER + 4] != 0) {
        env_sock_close(fd);
        return 2;
    }

    const uint32_t bitmap_len = (n_prb + 7) / 8;
    uint32_t decode_errors = 0;

    for (;;) {
        n = e3_read_frame(fd, g_frame, sizeof g_frame);
        if (n == 0) break;   /* clean end of stream */
        if (n < 0) break;    /* connection loss mid-frame */
        if (g_frame[2] != E3_INDICATION) continue;

        struct stage_clock t;
        t.t0 = env_clock_us();

        /* decode: indication payload and f32->f64 sample conversion */
        const uint32_t payload_len = be_get32(g_frame + 3);
        const uint8_t *pl = g_frame + E3_HEADER;
        if (payload_len < 21) {
            decode_errors++;
            continue;
        }
        const uint32_t seq = be_get32(pl + 4);
        const uint8_t payload_kind = pl[16];
        const uint32_t n_samples = be_get32(pl + 17);
        if (payload_kind != 1 || n_samples != fft_size ||
            payload_len != 21 + 8 * n_samples) {
            decode_errors++;
            continue;
        }
        const uint8_t *sp = pl + 21;
        for (uint32_t i = 0; i < n_samples; i++) {
            g_re[i] = (double)be_getf32(sp + 8 * i);
            g_im[i] = (double)be_getf32(sp + 8 * i + 4);
        }
        t.t1 = env_clock_us();

        /* process: sensing decision */
        uint8_t *bitmap = g_out + E3_HEADER + 11;
        const int32_t occ = sense_core(fft_size, n_prb, threshold_db, bitmap);
        t.t2 = env_clock_us();
        if (occ < 0) {
            decode_errors++;
            continue;
        }

        /* encode: control with the blocklist, echoing the indication seq */
        e3_header(g_out, E3_CONTROL, 11 + bitmap_len);
        be_put32(g_out + E3_HEADER, dapp_id);
        be_put32(g_out + E3_HEADER + 4, seq);
        g_out[E3_HEADER + 8] = 0x01; /* action: blocklist */
        be_put16(g_out + E3_HEADER + 9, (uint16_t)n_prb);
        t.t3 = env_clock_us();

        /* transmit */
        if (write_all(fd, g_out, E3_HEADER + 11 + bitmap_len) != 0) break;
        t.t4 = env_clock_us();

        if (stage_log) {
            stage_append(seq, &t);
            if (stage_stream && g_stage_len > STAGE_BUF / 2)
                flush_stage_log(stage_host, stage_port);
        }
    }

    env_sock_close(fd);
    if (stage_log) flush_stage_log(stage_host, stage_port);
    (void)decode_errors;
    return 0;
}
