#pragma once

namespace deepmap {

/// Keeps large freed blocks in the heap instead of returning them to the
/// system. Training allocates and frees the same multi-megabyte activations
/// every step; with glibc defaults each of those is a fresh mmap with page
/// faults. No-op on other C libraries.
void tune_allocator();

}  // namespace deepmap
