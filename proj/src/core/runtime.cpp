#include "cloudmamba/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cloudmamba {

void configure_allocator() {
#if defined(__GLIBC__)
  // 32 MiB is the largest mmap threshold glibc accepts on 64-bit targets.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace cloudmamba
