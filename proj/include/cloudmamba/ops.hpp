#pragma once

// Differentiable tensor operations. Feature maps are H×W×C; "rows" means the
// tensor viewed as (size / last_dim) × last_dim.

#include <vector>

#include "cloudmamba/autograd.hpp"

namespace cloudmamba::ag {

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int dilation = 1;

  int output_size(int input) const { return (input + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1; }
};

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real s);
Var add_scalar(const Var& a, Real s);
Var leaky_relu(const Var& x, Real negative_slope);
Var silu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var exp(const Var& x);

// Sum of all elements as a scalar.
Var sum(const Var& x);
// Σ w_i · s_i over scalar Vars.
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<Real>& weights);

// x (…×Cin) · W (Cin×Cout) + b (Cout). `bias` may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

// 2-D convolution. weight is (K·K·Cin)×Cout with rows ordered (ky, kx, ci).
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec);

// Per-channel K×K convolution with stride 1 and "same" padding.
// weight is (K·K)×C.
Var depthwise_conv2d(const Var& x, const Var& weight, const Var& bias, int kernel);

// Kernel-2 stride-2 transposed convolution. weight is Cin×(4·Cout) with
// column blocks ordered (ky, kx).
Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias);

// Normalises every row over the last axis, then applies gamma/beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps = 1e-5);

Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int begin, int count);
Var reshape(const Var& x, std::vector<int> shape);

// y[i, :] = x[index[i], :] for a rank-2 x.
Var gather_rows(const Var& x, const std::vector<int>& index);

// Half-pixel bilinear resampling of an H×W×C map.
Var resize_bilinear(const Var& x, int out_height, int out_width);
Tensor resize_bilinear(const Tensor& x, int out_height, int out_width);

// Multiplies every channel by a fixed H×W gain. The gain is a constant: no
// gradient flows into it.
Var mul_map(const Var& x, const Tensor& gain);

// Selective scan over u (L×D) with delta (L×D), A (D×N), B (L×N), C (L×N).
// A non-empty `order` visits row order[i] at step i (see ssm::ScanInputs);
// the output stays in row order.
Var selective_scan(const Var& u, const Var& delta, const Var& A, const Var& B, const Var& C,
                   const std::vector<int>& order = {});

}  // namespace cloudmamba::ag
