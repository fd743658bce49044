#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace roadfix::nn {

/// Keeps freed tensor buffers in the heap instead of handing them back to
/// the kernel. A training step frees and reallocates the same multi-megabyte
/// activations, and with glibc's defaults every reuse pays fresh page faults
/// (about a tenth of a base-16 step). Process-wide, so executables opt in.
inline void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc's upper limit
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace roadfix::nn
