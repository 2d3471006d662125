/* Server-role guest covering sock_bind/sock_accept: accepts one connection,
 * echoes everything until the peer closes, then exits with the byte count. */

#include "dapp_env.h"
#include "dapp_lib.h"

static uint8_t g_buf[4096];

DAPP_EXPORT(dapp_main)
int32_t dapp_main(void) {
    const uint32_t port = (uint32_t)cfg_get_u64("port", 9600);
    const int32_t lfd = env_sock_bind(port);
    if (lfd < 0) return 3;
    const int32_t fd = env_sock_accept(lfd);
    if (fd < 0) return 3;
    int32_t total = 0;
    for (;;) {
        const int32_t n = env_sock_read(fd, g_buf, sizeof g_buf);
        if (n <= 0) break;
        if (write_all(fd, g_buf, (uint32_t)n) != 0) break;
        total += n;
    }
    env_sock_close(fd);
    env_sock_close(lfd);
    return total;
}
