#pragma once

#include <cstddef>

namespace cloudmamba::detail {

// Elementwise transcendental kernels over contiguous buffers. They live in
// their own translation unit so it can be built with flags that let the
// compiler emit SIMD exp/log1p calls. In and out may alias.
void exp_inplace(float* values, std::size_t count);
void exp_inplace(double* values, std::size_t count);

void sigmoid(const double* in, double* out, std::size_t count);
// log(1 + e^x), evaluated as max(x, 0) + log1p(e^-|x|).
void softplus(const double* in, double* out, std::size_t count);
void silu(const double* in, double* out, std::size_t count);

}  // namespace cloudmamba::detail
