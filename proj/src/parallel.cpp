#include "rcnet/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rcnet {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_max_threads(int threads) {
#ifdef _OPENMP
  omp_set_num_threads(threads < 1 ? 1 : threads);
#else
  (void)threads;
#endif
}

void configure_threads_from_env() {
  const char* env = std::getenv("RCNET_THREADS");
  if (env == nullptr || *env == '\0') return;
  try {
    set_max_threads(std::stoi(env));
  } catch (const std::exception&) {
    set_max_threads(1);
  }
}

}  // namespace rcnet
