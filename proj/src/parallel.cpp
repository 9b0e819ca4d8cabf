#include "hxbcos/parallel.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>

namespace hxb {

namespace {

int initial_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("HX_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap > 0) n = std::min(n, cap);
    } catch (const std::exception&) {
      // unparsable values leave the default in place
    }
  }
  return n;
}

int& thread_setting() {
  static int n = [] {
    const int v = initial_threads();
    omp_set_num_threads(v);
    return v;
  }();
  return n;
}

}  // namespace

int worker_threads() { return thread_setting(); }

void set_worker_threads(int n) {
  thread_setting() = std::max(1, n);
  omp_set_num_threads(thread_setting());
}

}  // namespace hxb
