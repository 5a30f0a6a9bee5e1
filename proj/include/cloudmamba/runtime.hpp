#pragma once

namespace cloudmamba {

// Keeps large freed blocks (scan states, im2col buffers) inside the heap so
// every training step does not pay for fresh page faults. Call once at
// process start; later calls are harmless.
void configure_allocator();

}  // namespace cloudmamba
