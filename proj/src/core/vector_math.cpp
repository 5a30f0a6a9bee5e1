#include "vector_math.hpp"

#include <algorithm>
#include <cmath>

namespace cloudmamba::detail {

void exp_inplace(float* values, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) values[i] = std::exp(values[i]);
}

void exp_inplace(double* values, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) values[i] = std::exp(values[i]);
}

// The argument of exp is kept non-positive so nothing overflows, which keeps
// these safe under -ffinite-math-only.
void sigmoid(const double* in, double* out, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    const double e = std::exp(-std::abs(in[i]));
    const double r = 1.0 / (1.0 + e);
    out[i] = in[i] >= 0 ? r : e * r;
  }
}

void softplus(const double* in, double* out, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) out[i] = std::max(in[i], 0.0) + std::log1p(std::exp(-std::abs(in[i])));
}

void silu(const double* in, double* out, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    const double x = in[i];
    const double e = std::exp(-std::abs(x));
    const double r = 1.0 / (1.0 + e);
    out[i] = x * (x >= 0 ? r : e * r);
  }
}

}  // namespace cloudmamba::detail
