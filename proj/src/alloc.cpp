#include "invdes/tensor.hpp"

#include <malloc.h>

namespace invdes::detail {

void tune_allocator() {
    static const bool done = [] {
#if defined(__GLIBC__)
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
        return true;
    }();
    (void)done;
}

}  // namespace invdes::detail
