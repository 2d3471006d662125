#pragma once

#include <cstdint>
#include <string>

#include "sandbox/instance.hpp"

// In-process backing for the guest environment when the dApp source is built
// natively (the bare-metal baseline arm). The guest C code calls the same
// env_sock_* / env_clock_us symbols in both builds; here they resolve to a
// thread-local context instead of sandbox host functions. No capability
// checks: this arm models an unsandboxed deployment.

namespace nativearm {

// Binds the calling thread to a transport for the duration of the scope.
// The guest entry (dapp_main) must run on this thread.
class EnvScope {
public:
    EnvScope(sandbox::TransportMode transport, sandbox::VirtualHub* hub);
    ~EnvScope();

    EnvScope(const EnvScope&) = delete;
    EnvScope& operator=(const EnvScope&) = delete;
};

// Copies key=value config text into the natively linked guest's config buffer.
void set_dapp_config(const std::string& kv_text);

// Resets guest-core statics between runs (twiddle cache, stage buffer).
void reset_dapp_state();

// Runs the natively built dApp with the given config on the calling thread
// and returns its exit code. The guest core keeps static state: run one
// native dApp at a time per process.
int32_t run_dapp(sandbox::TransportMode transport, sandbox::VirtualHub* hub,
                 const std::string& kv_config);

} // namespace nativearm

extern "C" {
// Guest-core entry points from sensing_dapp.c (native build).
int32_t dapp_main(void);
char* dapp_config_ptr(void);
int32_t dapp_fft(double* re, double* im, uint32_t n);
int32_t dapp_sense(const float* iq_pairs, uint32_t n_samples, uint32_t fft_size,
                   uint32_t n_prb, double threshold_db, uint8_t* bitmap_out);
}
