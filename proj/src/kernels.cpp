#include "dfml/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>
#include <string>

namespace dfml::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::openmp};

int env_worker_override() {
  if (const char* s = std::getenv("DFML_WORKERS")) {
    const int n = std::atoi(s);
    if (n > 0) return n;
  }
  return 0;
}

struct ThreadInit {
  ThreadInit() {
    if (const int n = env_worker_override()) omp_set_num_threads(n);
  }
} g_thread_init;
}  // namespace

Backend backend() { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

int worker_count() {
  if (backend() == Backend::serial) return 1;
  if (const int n = env_worker_override()) return n;
  return omp_get_max_threads();
}

}  // namespace dfml::kernels
