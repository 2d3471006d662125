/* Guest importing a host function outside the whitelist; the loader must
 * reject it with ForbiddenImport("env.proc_spawn"). */

#include "dapp_env.h"

DAPP_IMPORT(proc_spawn) int32_t env_proc_spawn(void);

DAPP_EXPORT(dapp_main)
int32_t dapp_main(void) { return env_proc_spawn(); }
