#pragma once

namespace rcnet {

// Kernel-internal thread cap. Reads RCNET_THREADS once; 1 means fully serial.
int max_threads();
void set_max_threads(int threads);
void configure_threads_from_env();

}  // namespace rcnet
