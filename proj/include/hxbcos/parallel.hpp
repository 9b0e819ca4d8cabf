#pragma once

#include <cstddef>

namespace hxb {

/// Worker count for kernel loops. Defaults to the hardware concurrency, capped
/// by the HX_THREADS environment variable when it is set.
int worker_threads();
void set_worker_threads(int n);

}  // namespace hxb
