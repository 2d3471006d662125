/* Memory isolation probe. Two instances of this module share identical
 * linear-memory layouts, so if instance state ever leaked across sandboxes
 * the reader would observe the writer's pattern at the same addresses.
 *
 *   mode=write  - fill the probe area with 0xAB and exit 0
 *   mode=read   - count nonzero bytes in the (zero-initialised) probe area
 *                 and return the count; a fresh sandbox must return 0
 */

#include "dapp_env.h"
#include "dapp_lib.h"

#define PROBE_BYTES 262144u

static uint8_t g_area[PROBE_BYTES];

DAPP_EXPORT(dapp_main)
int32_t dapp_main(void) {
    char mode[16] = "read";
    cfg_get("mode", mode, sizeof mode);
    if (mode[0] == 'w') {
        d_memset(g_area, 0xAB, PROBE_BYTES);
        return 0;
    }
    uint32_t nonzero = 0;
    for (uint32_t i = 0; i < PROBE_BYTES; i++)
        if (g_area[i] != 0) nonzero++;
    return (int32_t)nonzero;
}
