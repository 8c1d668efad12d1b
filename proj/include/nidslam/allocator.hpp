#pragma once

#if defined(__GLIBC__) || __has_include(<malloc.h>)
#include <malloc.h>
#endif

namespace nidslam {

/// The optimizer allocates and frees multi-megabyte Eigen temporaries every iteration. With
/// glibc defaults these go through mmap/munmap and page faults dominate the runtime, so
/// keep them on the heap. Idempotent; a no-op elsewhere.
inline void tune_allocator() {
#if defined(M_MMAP_THRESHOLD) && defined(M_TRIM_THRESHOLD)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace nidslam
