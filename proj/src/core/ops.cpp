#include "cloudmamba/ops.hpp"

#include "core/vector_math.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "cloudmamba/ssm/selective_scan.hpp"
#include "core/vector_math.hpp"

namespace cloudmamba::ag {
namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

bool recording(std::initializer_list<const Var*> vars) {
  if (!grad_enabled()) return false;
  for (const Var* v : vars)
    if (v->requires_grad()) return true;
  return false;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank3(const Tensor& t, const char* op) {
  if (t.rank() != 3) throw ShapeError(std::string(op) + ": expected H×W×C tensor, got " + shape_string(t.shape()));
}

int last_dim(const Tensor& t) { return t.shape().back(); }
int row_count(const Tensor& t) { return static_cast<int>(t.size() / std::max(1, last_dim(t))); }

template <class F, class G>
Var unary(const Var& x, F forward, G derivative) {
  Tensor out(x.shape());
  const Real* xs = x.value().data();
  Real* ys = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) ys[i] = forward(xs[i]);
  return make_result(std::move(out), {x}, [derivative](Node& self) {
    const auto& in = self.parents[0];
    Tensor g(in->value.shape());
    const Real* xs = in->value.data();
    const Real* ys = self.value.data();
    const Real* gy = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = gy[i] * derivative(xs[i], ys[i]);
    accumulate(in, std::move(g));
  });
}

// Patch matrix for a convolution: one row per output pixel, columns ordered
// (ky, kx, ci).
void im2col(const Tensor& x, const ConvSpec& s, int out_h, int out_w, Real* cols) {
  const int H = x.height(), W = x.width(), C = x.channels(), K = s.kernel;
  const std::size_t row_len = static_cast<std::size_t>(K) * K * C;
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      Real* row = cols + (static_cast<std::size_t>(oy) * out_w + ox) * row_len;
      for (int ky = 0; ky < K; ++ky) {
        const int iy = oy * s.stride - s.padding + ky * s.dilation;
        for (int kx = 0; kx < K; ++kx) {
          const int ix = ox * s.stride - s.padding + kx * s.dilation;
          Real* dst = row + (static_cast<std::size_t>(ky) * K + kx) * C;
          if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
            std::fill(dst, dst + C, Real(0));
          } else {
            const Real* src = x.data() + (static_cast<std::size_t>(iy) * W + ix) * C;
            std::copy(src, src + C, dst);
          }
        }
      }
    }
  }
}

void col2im(const Real* cols, const ConvSpec& s, int out_h, int out_w, Tensor& gx) {
  const int H = gx.height(), W = gx.width(), C = gx.channels(), K = s.kernel;
  const std::size_t row_len = static_cast<std::size_t>(K) * K * C;
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const Real* row = cols + (static_cast<std::size_t>(oy) * out_w + ox) * row_len;
      for (int ky = 0; ky < K; ++ky) {
        const int iy = oy * s.stride - s.padding + ky * s.dilation;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < K; ++kx) {
          const int ix = ox * s.stride - s.padding + kx * s.dilation;
          if (ix < 0 || ix >= W) continue;
          const Real* src = row + (static_cast<std::size_t>(ky) * K + kx) * C;
          Real* dst = gx.data() + (static_cast<std::size_t>(iy) * W + ix) * C;
          for (int c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

void add_bias_rows(Real* out, int rows, int cols, const Var& bias) {
  if (!bias.defined()) return;
  if (static_cast<int>(bias.value().size()) != cols) throw ShapeError("bias length does not match output channels");
  const Real* b = bias.value().data();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] += b[c];
}

void bias_grad(const std::shared_ptr<Node>& bias, const Real* gy, int rows, int cols) {
  if (!bias || !bias->requires_grad) return;
  Tensor g(bias->value.shape());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) g[c] += gy[static_cast<std::size_t>(r) * cols + c];
  accumulate(bias, std::move(g));
}

struct BilinearTap {
  int i0, i1;
  Real w1;
};

std::vector<BilinearTap> bilinear_taps(int in, int out) {
  std::vector<BilinearTap> taps(out);
  const Real scale = static_cast<Real>(in) / out;
  for (int o = 0; o < out; ++o) {
    Real src = scale * (o + Real(0.5)) - Real(0.5);
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = i0 < in - 1 ? i0 + 1 : i0;
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Real* bs = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bs[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    accumulate(self.parents[0], self.grad);
    accumulate(self.parents[1], std::move(self.grad));
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Real* bs = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bs[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (self.parents[1] && self.parents[1]->requires_grad) {
      Tensor g = self.grad;
      for (auto& v : g.storage()) v = -v;
      accumulate(self.parents[1], std::move(g));
    }
    accumulate(self.parents[0], std::move(self.grad));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Real* bs = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bs[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pb->value[i];
      accumulate(pa, std::move(g));
    }
    if (pb->requires_grad) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pa->value[i];
      accumulate(pb, std::move(g));
    }
  });
}

Var scale(const Var& a, Real s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    Tensor g = self.grad;
    for (auto& v : g.storage()) v *= s;
    accumulate(self.parents[0], std::move(g));
  });
}

Var add_scalar(const Var& a, Real s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v += s;
  return make_result(std::move(out), {a}, [](Node& self) { accumulate(self.parents[0], std::move(self.grad)); });
}

Var leaky_relu(const Var& x, Real negative_slope) {
  return unary(
      x, [negative_slope](Real v) { return v > 0 ? v : negative_slope * v; },
      [negative_slope](Real v, Real) { return v > 0 ? Real(1) : negative_slope; });
}

Var silu(const Var& x) {
  Tensor out(x.shape());
  detail::silu(x.value().data(), out.data(), out.size());
  return make_result(std::move(out), {x}, [](Node& self) {
    const auto& in = self.parents[0];
    Tensor g(in->value.shape());
    detail::sigmoid(in->value.data(), g.data(), g.size());
    const Real* xs = in->value.data();
    const Real* gy = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = gy[i] * g[i] * (1 + xs[i] * (1 - g[i]));
    accumulate(in, std::move(g));
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  detail::sigmoid(x.value().data(), out.data(), out.size());
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor g = std::move(self.grad);
    const Real* ys = self.value.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= ys[i] * (1 - ys[i]);
    accumulate(self.parents[0], std::move(g));
  });
}

Var softplus(const Var& x) {
  Tensor out(x.shape());
  detail::softplus(x.value().data(), out.data(), out.size());
  return make_result(std::move(out), {x}, [](Node& self) {
    const auto& in = self.parents[0];
    Tensor g(in->value.shape());
    detail::sigmoid(in->value.data(), g.data(), g.size());
    const Real* gy = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= gy[i];
    accumulate(in, std::move(g));
  });
}

Var exp(const Var& x) {
  return unary(x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

Var sum(const Var& x) {
  Real s = 0;
  for (Real v : x.value().storage()) s += v;
  return make_result(Tensor::scalar(s), {x}, [](Node& self) {
    Tensor g(self.parents[0]->value.shape(), self.grad[0]);
    accumulate(self.parents[0], std::move(g));
  });
}

Var weighted_sum(const std::vector<Var>& scalars, const std::vector<Real>& weights) {
  if (scalars.size() != weights.size()) throw ShapeError("weighted_sum: weight count mismatch");
  Real s = 0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().size() != 1) throw ShapeError("weighted_sum expects scalar terms");
    s += weights[i] * scalars[i].value()[0];
  }
  return make_result(Tensor::scalar(s), scalars, [weights](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) accumulate(self.parents[i], Tensor::scalar(self.grad[0] * weights[i]));
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& w = weight.value();
  if (w.rank() != 2) throw ShapeError("linear: weight must be rank 2");
  const int cin = w.dim(0), cout = w.dim(1);
  if (last_dim(x.value()) != cin) {
    throw ShapeError("linear: input has " + std::to_string(last_dim(x.value())) + " channels, weight expects " +
                     std::to_string(cin));
  }
  const int rows = row_count(x.value());
  std::vector<int> shape = x.shape();
  shape.back() = cout;
  Tensor out(shape);
  MutMap(out.data(), rows, cout).noalias() = ConstMap(x.value().data(), rows, cin) * ConstMap(w.data(), cin, cout);
  add_bias_rows(out.data(), rows, cout, bias);
  return make_result(std::move(out), {x, weight, bias}, [rows, cin, cout](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    ConstMap gy(self.grad.data(), rows, cout);
    if (px->requires_grad) {
      Tensor g(px->value.shape());
      MutMap(g.data(), rows, cin).noalias() = gy * ConstMap(pw->value.data(), cin, cout).transpose();
      accumulate(px, std::move(g));
    }
    if (pw->requires_grad) {
      Tensor g(pw->value.shape());
      MutMap(g.data(), cin, cout).noalias() = ConstMap(px->value.data(), rows, cin).transpose() * gy;
      accumulate(pw, std::move(g));
    }
    bias_grad(self.parents[2], self.grad.data(), rows, cout);
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec) {
  const Tensor& xv = x.value();
  require_rank3(xv, "conv2d");
  const Tensor& w = weight.value();
  const int cin = xv.channels();
  const int patch = spec.kernel * spec.kernel * cin;
  if (w.rank() != 2 || w.dim(0) != patch) {
    throw ShapeError("conv2d: weight " + shape_string(w.shape()) + " incompatible with " + std::to_string(cin) +
                     " input channels and kernel " + std::to_string(spec.kernel));
  }
  const int cout = w.dim(1);
  const int oh = spec.output_size(xv.height()), ow = spec.output_size(xv.width());
  if (oh < 1 || ow < 1) throw ShapeError("conv2d: output would be empty for input " + shape_string(xv.shape()));
  const int rows = oh * ow;
  const bool pointwise = spec.kernel == 1 && spec.stride == 1 && spec.padding == 0;

  Tensor out({oh, ow, cout});
  if (pointwise) {
    MutMap(out.data(), rows, cout).noalias() = ConstMap(xv.data(), rows, cin) * ConstMap(w.data(), cin, cout);
  } else {
    std::vector<Real> cols(static_cast<std::size_t>(rows) * patch);
    im2col(xv, spec, oh, ow, cols.data());
    MutMap(out.data(), rows, cout).noalias() = ConstMap(cols.data(), rows, patch) * ConstMap(w.data(), patch, cout);
  }
  add_bias_rows(out.data(), rows, cout, bias);

  return make_result(std::move(out), {x, weight, bias}, [spec, oh, ow, rows, patch, cout, pointwise](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    ConstMap gy(self.grad.data(), rows, cout);
    std::vector<Real> cols;
    const Real* colp = px->value.data();
    if (!pointwise) {
      cols.resize(static_cast<std::size_t>(rows) * patch);
      im2col(px->value, spec, oh, ow, cols.data());
      colp = cols.data();
    }
    if (pw->requires_grad) {
      Tensor g(pw->value.shape());
      MutMap(g.data(), patch, cout).noalias() = ConstMap(colp, rows, patch).transpose() * gy;
      accumulate(pw, std::move(g));
    }
    bias_grad(self.parents[2], self.grad.data(), rows, cout);
    if (px->requires_grad) {
      if (pointwise) {
        Tensor g(px->value.shape());
        MutMap(g.data(), rows, patch).noalias() = gy * ConstMap(pw->value.data(), patch, cout).transpose();
        accumulate(px, std::move(g));
      } else {
        std::vector<Real> gcols(static_cast<std::size_t>(rows) * patch);
        MutMap(gcols.data(), rows, patch).noalias() = gy * ConstMap(pw->value.data(), patch, cout).transpose();
        Tensor g(px->value.shape());
        col2im(gcols.data(), spec, oh, ow, g);
        accumulate(px, std::move(g));
      }
    }
  });
}

Var depthwise_conv2d(const Var& x, const Var& weight, const Var& bias, int kernel) {
  const Tensor& xv = x.value();
  require_rank3(xv, "depthwise_conv2d");
  const int H = xv.height(), W = xv.width(), C = xv.channels();
  const Tensor& w = weight.value();
  if (w.rank() != 2 || w.dim(0) != kernel * kernel || w.dim(1) != C) {
    throw ShapeError("depthwise_conv2d: weight " + shape_string(w.shape()) + " incompatible with " + std::to_string(C) +
                     " channels");
  }
  const int pad = kernel / 2;
  Tensor out({H, W, C});
  for (int y = 0; y < H; ++y) {
    for (int x0 = 0; x0 < W; ++x0) {
      Real* dst = out.data() + (static_cast<std::size_t>(y) * W + x0) * C;
      for (int ky = 0; ky < kernel; ++ky) {
        const int iy = y - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < kernel; ++kx) {
          const int ix = x0 - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const Real* src = xv.data() + (static_cast<std::size_t>(iy) * W + ix) * C;
          const Real* wk = w.data() + static_cast<std::size_t>(ky * kernel + kx) * C;
          for (int c = 0; c < C; ++c) dst[c] += src[c] * wk[c];
        }
      }
    }
  }
  add_bias_rows(out.data(), H * W, C, bias);
  return make_result(std::move(out), {x, weight, bias}, [kernel, pad, H, W, C](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    Tensor gx(px->value.shape());
    Tensor gw(pw->value.shape());
    const Real* xs = px->value.data();
    const Real* ws = pw->value.data();
    for (int y = 0; y < H; ++y) {
      for (int x0 = 0; x0 < W; ++x0) {
        const Real* gy = self.grad.data() + (static_cast<std::size_t>(y) * W + x0) * C;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = y - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = x0 - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const std::size_t src = (static_cast<std::size_t>(iy) * W + ix) * C;
            const std::size_t wo = static_cast<std::size_t>(ky * kernel + kx) * C;
            for (int c = 0; c < C; ++c) {
              gx[src + c] += gy[c] * ws[wo + c];
              gw[wo + c] += gy[c] * xs[src + c];
            }
          }
        }
      }
    }
    accumulate(px, std::move(gx));
    accumulate(pw, std::move(gw));
    bias_grad(self.parents[2], self.grad.data(), H * W, C);
  });
}

Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  require_rank3(xv, "conv_transpose2x2");
  const int H = xv.height(), W = xv.width(), cin = xv.channels();
  const Tensor& w = weight.value();
  if (w.rank() != 2 || w.dim(0) != cin || w.dim(1) % 4 != 0) {
    throw ShapeError("conv_transpose2x2: weight " + shape_string(w.shape()) + " incompatible with " +
                     std::to_string(cin) + " input channels");
  }
  const int cout = w.dim(1) / 4;
  const int rows = H * W;
  RowMatrix taps = ConstMap(xv.data(), rows, cin) * ConstMap(w.data(), cin, 4 * cout);
  Tensor out({2 * H, 2 * W, cout});
  for (int y = 0; y < H; ++y)
    for (int x0 = 0; x0 < W; ++x0)
      for (int k = 0; k < 4; ++k) {
        const int oy = 2 * y + k / 2, ox = 2 * x0 + k % 2;
        const Real* src = taps.data() + (static_cast<std::size_t>(y) * W + x0) * 4 * cout + k * cout;
        std::copy(src, src + cout, out.data() + (static_cast<std::size_t>(oy) * 2 * W + ox) * cout);
      }
  add_bias_rows(out.data(), 4 * rows, cout, bias);
  return make_result(std::move(out), {x, weight, bias}, [H, W, cin, cout, rows](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    RowMatrix gtaps(rows, 4 * cout);
    for (int y = 0; y < H; ++y)
      for (int x0 = 0; x0 < W; ++x0)
        for (int k = 0; k < 4; ++k) {
          const int oy = 2 * y + k / 2, ox = 2 * x0 + k % 2;
          const Real* src = self.grad.data() + (static_cast<std::size_t>(oy) * 2 * W + ox) * cout;
          std::copy(src, src + cout, gtaps.data() + (static_cast<std::size_t>(y) * W + x0) * 4 * cout + k * cout);
        }
    if (px->requires_grad) {
      Tensor g(px->value.shape());
      MutMap(g.data(), rows, cin).noalias() = gtaps * ConstMap(pw->value.data(), cin, 4 * cout).transpose();
      accumulate(px, std::move(g));
    }
    if (pw->requires_grad) {
      Tensor g(pw->value.shape());
      MutMap(g.data(), cin, 4 * cout).noalias() = ConstMap(px->value.data(), rows, cin).transpose() * gtaps;
      accumulate(pw, std::move(g));
    }
    bias_grad(self.parents[2], self.grad.data(), 4 * rows, cout);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
  const int C = last_dim(x.value());
  const int rows = row_count(x.value());
  if (static_cast<int>(gamma.value().size()) != C || static_cast<int>(beta.value().size()) != C) {
    throw ShapeError("layer_norm: affine parameters do not match " + std::to_string(C) + " channels");
  }
  auto mean = std::make_shared<std::vector<Real>>(rows);
  auto rstd = std::make_shared<std::vector<Real>>(rows);
  Tensor out(x.shape());
  const Real* xs = x.value().data();
  const Real* g = gamma.value().data();
  const Real* b = beta.value().data();
  for (int r = 0; r < rows; ++r) {
    const Real* row = xs + static_cast<std::size_t>(r) * C;
    Real mu = 0;
    for (int c = 0; c < C; ++c) mu += row[c];
    mu /= C;
    Real var = 0;
    for (int c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= C;
    const Real rs = 1 / std::sqrt(var + eps);
    (*mean)[r] = mu;
    (*rstd)[r] = rs;
    Real* dst = out.data() + static_cast<std::size_t>(r) * C;
    for (int c = 0; c < C; ++c) dst[c] = (row[c] - mu) * rs * g[c] + b[c];
  }
  return make_result(std::move(out), {x, gamma, beta}, [mean, rstd, rows, C](Node& self) {
    const auto& px = self.parents[0];
    const auto& pg = self.parents[1];
    const auto& pb = self.parents[2];
    Tensor gx(px->value.shape());
    Tensor gg(pg->value.shape());
    Tensor gb(pb->value.shape());
    const Real* gamma = pg->value.data();
    std::vector<Real> xhat(C), gxhat(C);
    for (int r = 0; r < rows; ++r) {
      const Real* row = px->value.data() + static_cast<std::size_t>(r) * C;
      const Real* gy = self.grad.data() + static_cast<std::size_t>(r) * C;
      const Real mu = (*mean)[r], rs = (*rstd)[r];
      Real m1 = 0, m2 = 0;
      for (int c = 0; c < C; ++c) {
        xhat[c] = (row[c] - mu) * rs;
        gxhat[c] = gy[c] * gamma[c];
        gg[c] += gy[c] * xhat[c];
        gb[c] += gy[c];
        m1 += gxhat[c];
        m2 += gxhat[c] * xhat[c];
      }
      m1 /= C;
      m2 /= C;
      Real* dst = gx.data() + static_cast<std::size_t>(r) * C;
      for (int c = 0; c < C; ++c) dst[c] = rs * (gxhat[c] - m1 - xhat[c] * m2);
    }
    accumulate(px, std::move(gx));
    accumulate(pg, std::move(gg));
    accumulate(pb, std::move(gb));
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const int rows = row_count(parts[0].value());
  std::vector<int> widths;
  int total = 0;
  for (const auto& p : parts) {
    if (row_count(p.value()) != rows || p.value().rank() != parts[0].value().rank()) {
      throw ShapeError("concat_channels: spatial shape mismatch " + shape_string(p.shape()) + " vs " +
                       shape_string(parts[0].shape()));
    }
    widths.push_back(last_dim(p.value()));
    total += widths.back();
  }
  std::vector<int> shape = parts[0].shape();
  shape.back() = total;
  Tensor out(shape);
  int offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Real* src = parts[i].value().data();
    for (int r = 0; r < rows; ++r)
      std::copy(src + static_cast<std::size_t>(r) * widths[i], src + static_cast<std::size_t>(r + 1) * widths[i],
                out.data() + static_cast<std::size_t>(r) * total + offset);
    offset += widths[i];
  }
  return make_result(std::move(out), parts, [widths, rows, total](Node& self) {
    int offset = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const auto& p = self.parents[i];
      if (p->requires_grad) {
        Tensor g(p->value.shape());
        for (int r = 0; r < rows; ++r) {
          const Real* src = self.grad.data() + static_cast<std::size_t>(r) * total + offset;
          std::copy(src, src + widths[i], g.data() + static_cast<std::size_t>(r) * widths[i]);
        }
        accumulate(p, std::move(g));
      }
      offset += widths[i];
    }
  });
}

Var slice_channels(const Var& x, int begin, int count) {
  const int C = last_dim(x.value());
  if (begin < 0 || count < 1 || begin + count > C) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + std::to_string(C) + " channels");
  }
  const int rows = row_count(x.value());
  std::vector<int> shape = x.shape();
  shape.back() = count;
  Tensor out(shape);
  for (int r = 0; r < rows; ++r) {
    const Real* src = x.value().data() + static_cast<std::size_t>(r) * C + begin;
    std::copy(src, src + count, out.data() + static_cast<std::size_t>(r) * count);
  }
  return make_result(std::move(out), {x}, [begin, count, rows, C](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    for (int r = 0; r < rows; ++r) {
      const Real* src = self.grad.data() + static_cast<std::size_t>(r) * count;
      std::copy(src, src + count, g.data() + static_cast<std::size_t>(r) * C + begin);
    }
    accumulate(self.parents[0], std::move(g));
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    accumulate(self.parents[0], self.grad.reshaped(self.parents[0]->value.shape()));
  });
}

Var gather_rows(const Var& x, const std::vector<int>& index) {
  if (x.value().rank() != 2) throw ShapeError("gather_rows expects a rank-2 tensor");
  const int rows = x.value().dim(0), cols = x.value().dim(1);
  Tensor out({static_cast<int>(index.size()), cols});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= rows) throw ShapeError("gather_rows: index out of range");
    const Real* src = x.value().data() + static_cast<std::size_t>(index[i]) * cols;
    std::copy(src, src + cols, out.data() + i * cols);
  }
  return make_result(std::move(out), {x}, [index, cols](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    for (std::size_t i = 0; i < index.size(); ++i) {
      const Real* src = self.grad.data() + i * cols;
      Real* dst = g.data() + static_cast<std::size_t>(index[i]) * cols;
      for (int c = 0; c < cols; ++c) dst[c] += src[c];
    }
    accumulate(self.parents[0], std::move(g));
  });
}

Tensor resize_bilinear(const Tensor& x, int out_height, int out_width) {
  require_rank3(x, "resize_bilinear");
  if (out_height < 1 || out_width < 1) throw ShapeError("resize_bilinear: empty output size");
  const int H = x.height(), W = x.width(), C = x.channels();
  const auto ty = bilinear_taps(H, out_height);
  const auto tx = bilinear_taps(W, out_width);
  Tensor out({out_height, out_width, C});
  for (int oy = 0; oy < out_height; ++oy) {
    const auto& a = ty[oy];
    for (int ox = 0; ox < out_width; ++ox) {
      const auto& b = tx[ox];
      const Real w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1;
      const Real w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
      const Real* p00 = x.data() + (static_cast<std::size_t>(a.i0) * W + b.i0) * C;
      const Real* p01 = x.data() + (static_cast<std::size_t>(a.i0) * W + b.i1) * C;
      const Real* p10 = x.data() + (static_cast<std::size_t>(a.i1) * W + b.i0) * C;
      const Real* p11 = x.data() + (static_cast<std::size_t>(a.i1) * W + b.i1) * C;
      Real* dst = out.data() + (static_cast<std::size_t>(oy) * out_width + ox) * C;
      for (int c = 0; c < C; ++c) dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
    }
  }
  return out;
}

Var resize_bilinear(const Var& x, int out_height, int out_width) {
  Tensor out = resize_bilinear(x.value(), out_height, out_width);
  return make_result(std::move(out), {x}, [out_height, out_width](Node& self) {
    const auto& px = self.parents[0];
    const int H = px->value.height(), W = px->value.width(), C = px->value.channels();
    const auto ty = bilinear_taps(H, out_height);
    const auto tx = bilinear_taps(W, out_width);
    Tensor g(px->value.shape());
    for (int oy = 0; oy < out_height; ++oy) {
      const auto& a = ty[oy];
      for (int ox = 0; ox < out_width; ++ox) {
        const auto& b = tx[ox];
        const Real w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1;
        const Real w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
        const Real* gy = self.grad.data() + (static_cast<std::size_t>(oy) * out_width + ox) * C;
        Real* p00 = g.data() + (static_cast<std::size_t>(a.i0) * W + b.i0) * C;
        Real* p01 = g.data() + (static_cast<std::size_t>(a.i0) * W + b.i1) * C;
        Real* p10 = g.data() + (static_cast<std::size_t>(a.i1) * W + b.i0) * C;
        Real* p11 = g.data() + (static_cast<std::size_t>(a.i1) * W + b.i1) * C;
        for (int c = 0; c < C; ++c) {
          p00[c] += w00 * gy[c];
          p01[c] += w01 * gy[c];
          p10[c] += w10 * gy[c];
          p11[c] += w11 * gy[c];
        }
      }
    }
    accumulate(px, std::move(g));
  });
}

Var mul_map(const Var& x, const Tensor& gain) {
  const Tensor& xv = x.value();
  require_rank3(xv, "mul_map");
  if (gain.rank() != 3 || gain.height() != xv.height() || gain.width() != xv.width() || gain.channels() != 1) {
    throw ShapeError("mul_map: gain " + shape_string(gain.shape()) + " does not match feature " +
                     shape_string(xv.shape()));
  }
  const int pixels = xv.height() * xv.width(), C = xv.channels();
  Tensor out = xv;
  for (int p = 0; p < pixels; ++p)
    for (int c = 0; c < C; ++c) out[static_cast<std::size_t>(p) * C + c] *= gain[p];
  return make_result(std::move(out), {x}, [gain, pixels, C](Node& self) {
    Tensor g = self.grad;
    for (int p = 0; p < pixels; ++p)
      for (int c = 0; c < C; ++c) g[static_cast<std::size_t>(p) * C + c] *= gain[p];
    accumulate(self.parents[0], std::move(g));
  });
}

Var selective_scan(const Var& u, const Var& delta, const Var& A, const Var& B, const Var& C,
                   const std::vector<int>& order) {
  const Tensor& uv = u.value();
  if (uv.rank() != 2 || A.value().rank() != 2) throw ShapeError("selective_scan: u and A must be rank 2");
  const int L = uv.dim(0), D = uv.dim(1), N = A.value().dim(1);
  if (A.value().dim(0) != D) throw ShapeError("selective_scan: A rows do not match channel count");
  auto ord = std::make_shared<const std::vector<int>>(order);
  ssm::ScanInputs<Real> in{L, D, N, uv.storage(), delta.value().storage(), A.value().storage(),
                           B.value().storage(), C.value().storage(), *ord};
  const bool record = recording({&u, &delta, &A, &B, &C});
  auto states = std::make_shared<std::vector<Real>>();
  if (record) states->resize(static_cast<std::size_t>(L) * D * N);
  Tensor y({L, D});
  ssm::scan_forward<Real>(in, y.storage(), *states);
  return make_result(std::move(y), {u, delta, A, B, C}, [states, ord, L, D, N](Node& self) {
    const auto& p = self.parents;
    ssm::ScanInputs<Real> in{L, D, N, p[0]->value.storage(), p[1]->value.storage(), p[2]->value.storage(),
                             p[3]->value.storage(), p[4]->value.storage(), *ord};
    auto g = ssm::scan_backward<Real>(in, *states, self.grad.storage());
    states->clear();
    states->shrink_to_fit();
    accumulate(p[0], Tensor(p[0]->value.shape(), std::move(g.u)));
    accumulate(p[1], Tensor(p[1]->value.shape(), std::move(g.delta)));
    accumulate(p[2], Tensor(p[2]->value.shape(), std::move(g.A)));
    accumulate(p[3], Tensor(p[3]->value.shape(), std::move(g.B)));
    accumulate(p[4], Tensor(p[4]->value.shape(), std::move(g.C)));
  });
}

}  // namespace cloudmamba::ag
