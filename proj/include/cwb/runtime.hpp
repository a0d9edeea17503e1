#pragma once

// Process-level tuning shared by the tools and test drivers.

#include <cstdlib>
#include <string>

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cwb {

/// The solver allocates and frees the same few megabytes of temporaries every
/// step. glibc's default is to hand such blocks back to the kernel, which
/// turns each step into a round of page faults; keep them in the heap instead.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TOP_PAD, 64 * 1024 * 1024);
#endif
}

/// Thread count for Eigen's parallel products, from CWB_THREADS when set.
/// Returns the count in effect.
inline int configure_threads() {
    if (const char* env = std::getenv("CWB_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) Eigen::setNbThreads(n);
        } catch (const std::exception&) {
        }
    }
    return Eigen::nbThreads();
}

}  // namespace cwb
