/* Synthetic-load guest for the isolation experiment and capacity calibration.
 *
 * Modes (config key "mode"):
 *   flat   - spin the kernel forever; used for capacity calibration
 *   probe  - run exactly "iters" kernel iterations, return the checksum;
 *            used to measure fuel-per-iteration and for resume-correctness
 *   paced  - connect to the pacer endpoint and run "iters_per_period" kernel
 *            iterations per pacing byte; byte value 1 switches to flat-out
 *            saturation (the misbehaving-dApp phase change)
 */

#include "dapp_env.h"
#include "dapp_lib.h"

/* volatile: the flat/saturate spins are infinite loops whose only effect is
 * this accumulator; it must stay observable or the compiler erases them */
static volatile uint64_t g_x;

/* Fixed-cost integer kernel; one iteration executes a constant number of
 * bytecode instructions, so iteration counts translate linearly to fuel. */
static void kernel(uint32_t iters) {
    uint64_t x = g_x;
    for (uint32_t i = 0; i < iters; i++) {
        x = x * 6364136223846793005ull + 1442695040888963407ull;
        x ^= x >> 17;
    }
    g_x = x;
}

DAPP_EXPORT(dapp_main)
int32_t dapp_main(void) {
    char mode[16] = "flat";
    cfg_get("mode", mode, sizeof mode);
    g_x = cfg_get_u64("seed", 0x9E3779B97F4A7C15ull);

    if (mode[0] == 'p' && mode[1] == 'r') { /* probe */
        uint64_t iters = cfg_get_u64("iters", 10000000);
        while (iters > 0) {
            const uint32_t chunk = iters > 65536 ? 65536u : (uint32_t)iters;
            kernel(chunk);
            iters -= chunk;
        }
        return (int32_t)(g_x & 0x7FFFFFFF);
    }

    if (mode[0] == 'p' && mode[1] == 'a') { /* paced */
        char pacer_host[64] = "pacer";
        cfg_get("pacer_host", pacer_host, sizeof pacer_host);
        const uint32_t pacer_port = (uint32_t)cfg_get_u64("pacer_port", 9500);
        const uint64_t iters_per_period = cfg_get_u64("iters_per_period", 100000);

        const int32_t fd =
            env_sock_connect(pacer_host, d_strlen(pacer_host), pacer_port);
        if (fd < 0) return 3;
        for (;;) {
            uint8_t signal;
            const int32_t r = env_sock_read(fd, &signal, 1);
            if (r <= 0) break; /* pacer gone: wind down */
            if (signal == 1) {
                for (;;) kernel(65536); /* saturate */
            }
            uint64_t left = iters_per_period;
            while (left > 0) {
                const uint32_t chunk = left > 65536 ? 65536u : (uint32_t)left;
                kernel(chunk);
                left -= chunk;
            }
        }
        env_sock_close(fd);
        return 0;
    }

    for (;;) kernel(65536); /* flat */
}
