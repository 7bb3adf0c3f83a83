#include "deepmap/runtime.hpp"

#include <cstdlib>  // defines __GLIBC__

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace deepmap {

void tune_allocator() {
#if defined(__GLIBC__)
  // Large graph buffers are freed and reallocated every step; serving them
  // from mmap costs a page fault per 4 KiB each time.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace deepmap
