#pragma once

namespace dpcn {

/// Keeps large activation buffers on the heap between steps instead of
/// returning them to the OS after every free. No-op outside glibc. Safe to
/// call more than once.
void tune_allocator();

}  // namespace dpcn
