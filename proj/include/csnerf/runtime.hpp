#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace csnerf {

// Training allocates and frees many multi-megabyte temporaries per step.
// Keeping them on the heap instead of fresh mmap regions avoids a page
// fault storm on every allocation. No-op outside glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace csnerf
