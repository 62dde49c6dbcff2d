#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace carnas {

/// Keeps large tensor buffers on the heap instead of fresh mmap regions.
/// Training allocates and frees many ~100 KB blocks per step; with glibc's
/// defaults each one costs page faults. Call once at process start.
inline void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace carnas
