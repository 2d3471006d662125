/* Deliberately misbehaving guest: runs briefly, then stores far outside its
 * linear memory. The runtime must trap and contain it. */

#include "dapp_env.h"
#include "dapp_lib.h"

static volatile uint32_t sink;

DAPP_EXPORT(dapp_main)
int32_t dapp_main(void) {
    const uint32_t spins = (uint32_t)cfg_get_u64("spins", 1000);
    uint32_t acc = 1;
    for (uint32_t i = 0; i < spins; i++) acc = acc * 1103515245u + 12345u;
    sink = acc;
    *(volatile uint32_t *)0x7FFFFFF0u = acc; /* out-of-bounds store */
    return (int32_t)acc;
}
