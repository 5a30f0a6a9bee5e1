#include "cloudmamba/ssm/selective_scan.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "cloudmamba/error.hpp"
#include "core/vector_math.hpp"

namespace cloudmamba::ssm {
namespace {

constexpr int kChunk = 32;

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using MutMap = Eigen::Map<RowMatrix<T>>;

void require_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + " has " + std::to_string(got) + " entries, expected " + std::to_string(want));
  }
}

// decay[s, d, n] = exp(delta[row(l0 + s), d] * A[d, n]) for s in [0, len).
template <class T>
void fill_decay(const ScanInputs<T>& in, int l0, int len, T* decay) {
  const int D = in.channels;
  const int N = in.state_dim;
  const std::size_t dn = static_cast<std::size_t>(D) * N;
  for (int s = 0; s < len; ++s) {
    const T* dl = in.delta.data() + static_cast<std::size_t>(in.row(l0 + s)) * D;
    T* dst = decay + s * dn;
    for (int d = 0; d < D; ++d) {
      const T* a = in.A.data() + static_cast<std::size_t>(d) * N;
      for (int n = 0; n < N; ++n) dst[d * N + n] = dl[d] * a[n];
    }
  }
  cloudmamba::detail::exp_inplace(decay, len * dn);
}

}  // namespace

template <class T>
T softplus(T z) {
  return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

template <class T>
void SSMParams<T>::validate() const {
  if (channels < 1) throw InvalidParameter("SSM channel count must be >= 1");
  if (state_dim < 1) throw InvalidParameter("SSM state_dim must be >= 1");
  if (dt_rank < 1) throw InvalidParameter("SSM dt_rank must be >= 1");
  const std::size_t D = channels, N = state_dim, R = dt_rank;
  require_size(A.size(), D * N, "A");
  require_size(delta_down.size(), D * R, "delta_down");
  require_size(delta_up.size(), R * D, "delta_up");
  require_size(delta_bias.size(), D, "delta_bias");
  require_size(B_proj.size(), D * N, "B_proj");
  require_size(C_proj.size(), D * N, "C_proj");
  for (T a : A) {
    if (!(a < T(0))) throw InvalidParameter("state matrix A must be strictly negative, found " + std::to_string(a));
  }
}

template <class T>
SSMParams<T> SSMParams<T>::initialized(int channels, int state_dim, std::uint64_t seed) {
  SSMParams p;
  p.channels = channels;
  p.state_dim = state_dim;
  p.dt_rank = default_dt_rank(channels);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  p.A.resize(static_cast<std::size_t>(channels) * state_dim);
  for (int d = 0; d < channels; ++d)
    for (int n = 0; n < state_dim; ++n) p.A[static_cast<std::size_t>(d) * state_dim + n] = -T(n + 1);

  auto gaussian = [&](std::vector<T>& v, std::size_t count, double scale) {
    v.resize(count);
    for (auto& x : v) x = static_cast<T>(normal(rng) * scale);
  };
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(channels));
  gaussian(p.delta_down, static_cast<std::size_t>(channels) * p.dt_rank, in_scale);
  gaussian(p.delta_up, static_cast<std::size_t>(p.dt_rank) * channels, 1.0 / std::sqrt(static_cast<double>(p.dt_rank)) * 0.1);
  gaussian(p.B_proj, static_cast<std::size_t>(channels) * state_dim, in_scale);
  gaussian(p.C_proj, static_cast<std::size_t>(channels) * state_dim, in_scale);

  p.delta_bias.resize(channels);
  const double lo = std::log(0.03), hi = std::log(0.1);
  for (auto& b : p.delta_bias) {
    const double dt = std::exp(lo + (hi - lo) * unit(rng));
    b = static_cast<T>(dt + std::log(-std::expm1(-dt)));  // inverse softplus
  }
  return p;
}

template <class T>
Discretized<T> discretize(std::span<const T> delta, std::span<const T> A, std::span<const T> B, int length,
                          int channels, int state_dim) {
  if (length < 1 || channels < 1 || state_dim < 1) throw ShapeError("discretize: dimensions must be positive");
  const std::size_t L = length, D = channels, N = state_dim;
  require_size(delta.size(), L * D, "delta");
  require_size(A.size(), D * N, "A");
  require_size(B.size(), L * N, "B");
  for (T v : delta)
    if (!(v > T(0))) throw InvalidParameter("delta must be strictly positive, found " + std::to_string(v));
  for (T v : A)
    if (!(v < T(0))) throw InvalidParameter("A must be strictly negative, found " + std::to_string(v));

  Discretized<T> out{length, channels, state_dim, std::vector<T>(L * D * N), std::vector<T>(L * D * N)};
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t i = (l * D + d) * N + n;
        out.A_bar[i] = std::exp(delta[l * D + d] * A[d * N + n]);
        out.B_bar[i] = delta[l * D + d] * B[l * N + n];
      }
  return out;
}

template <class T>
Projections<T> project(const Sequence<T>& u, const SSMParams<T>& params) {
  params.validate();
  if (u.channels != params.channels) {
    throw ShapeError("sequence has " + std::to_string(u.channels) + " channels, SSM expects " +
                     std::to_string(params.channels));
  }
  require_size(u.data.size(), static_cast<std::size_t>(u.length) * u.channels, "u");
  const int L = u.length, D = params.channels, N = params.state_dim, R = params.dt_rank;
  ConstMap<T> U(u.data.data(), L, D);

  RowMatrix<T> low = U * ConstMap<T>(params.delta_down.data(), D, R);
  Projections<T> out{Sequence<T>(L, D), Sequence<T>(L, N), Sequence<T>(L, N)};
  MutMap<T> delta(out.delta.data.data(), L, D);
  delta.noalias() = low * ConstMap<T>(params.delta_up.data(), R, D);
  for (int l = 0; l < L; ++l)
    for (int d = 0; d < D; ++d) delta(l, d) = softplus(delta(l, d) + params.delta_bias[d]);
  MutMap<T>(out.B.data.data(), L, N).noalias() = U * ConstMap<T>(params.B_proj.data(), D, N);
  MutMap<T>(out.C.data.data(), L, N).noalias() = U * ConstMap<T>(params.C_proj.data(), D, N);
  return out;
}

template <class T>
void ScanInputs<T>::validate() const {
  if (length < 1) throw ShapeError("scan length must be >= 1");
  if (channels < 1 || state_dim < 1) throw ShapeError("scan channels and state_dim must be >= 1");
  const std::size_t L = length, D = channels, N = state_dim;
  require_size(u.size(), L * D, "u");
  require_size(delta.size(), L * D, "delta");
  require_size(A.size(), D * N, "A");
  require_size(B.size(), L * N, "B");
  require_size(C.size(), L * N, "C");
  if (!order.empty()) {
    require_size(order.size(), L, "order");
    std::vector<char> seen(L, 0);
    for (int r : order) {
      if (r < 0 || r >= length || seen[r]) throw ShapeError("scan order is not a permutation of [0, L)");
      seen[r] = 1;
    }
  }
}

namespace {

// The recurrences below are written once and instantiated for the common
// state sizes so the inner n-loop is fully unrolled and vectorised. NN == 0
// is the runtime-sized fallback.
template <class T, int NN>
void forward_kernel(const ScanInputs<T>& in, std::span<T> y, std::span<T> states) {
  const int L = in.length, D = in.channels, N = NN > 0 ? NN : in.state_dim;
  const std::size_t dn = static_cast<std::size_t>(D) * N;
  std::vector<T> x(dn, T(0));
  std::vector<T> decay(kChunk * dn);
  for (int l0 = 0; l0 < L; l0 += kChunk) {
    const int len = std::min(kChunk, L - l0);
    fill_decay(in, l0, len, decay.data());
    for (int s = 0; s < len; ++s) {
      const std::size_t l = static_cast<std::size_t>(l0 + s);
      const std::size_t r = static_cast<std::size_t>(in.row(l0 + s));
      const T* Bl = in.B.data() + r * N;
      const T* Cl = in.C.data() + r * N;
      const T* ul = in.u.data() + r * D;
      const T* dl = in.delta.data() + r * D;
      const T* al = decay.data() + s * dn;
      T* yl = y.data() + r * D;
      for (int d = 0; d < D; ++d) {
        const T du = dl[d] * ul[d];
        T* xd = x.data() + static_cast<std::size_t>(d) * N;
        const T* ad = al + static_cast<std::size_t>(d) * N;
        T acc = 0;
        for (int n = 0; n < N; ++n) {
          xd[n] = ad[n] * xd[n] + du * Bl[n];
          acc += Cl[n] * xd[n];
        }
        yl[d] = acc;
      }
      if (!states.empty()) std::copy(x.begin(), x.end(), states.begin() + l * dn);
    }
  }
}

template <class T, int NN>
void backward_kernel(const ScanInputs<T>& in, std::span<const T> states, std::span<const T> grad_y,
                     ScanGradients<T>& g) {
  const int L = in.length, D = in.channels, N = NN > 0 ? NN : in.state_dim;
  const std::size_t dn = static_cast<std::size_t>(D) * N;
  std::vector<T> gx(dn, T(0));
  std::vector<T> decay(kChunk * dn);
  const std::vector<T> zeros(dn, T(0));
  const int chunks = (L + kChunk - 1) / kChunk;
  for (int c = chunks - 1; c >= 0; --c) {
    const int l0 = c * kChunk;
    const int len = std::min(kChunk, L - l0);
    fill_decay(in, l0, len, decay.data());
    for (int s = len - 1; s >= 0; --s) {
      const std::size_t l = static_cast<std::size_t>(l0 + s);
      const std::size_t r = static_cast<std::size_t>(in.row(l0 + s));
      const T* Bl = in.B.data() + r * N;
      const T* Cl = in.C.data() + r * N;
      const T* ul = in.u.data() + r * D;
      const T* dl = in.delta.data() + r * D;
      const T* gyl = grad_y.data() + r * D;
      const T* xl = states.data() + l * dn;
      const T* xprev = l > 0 ? states.data() + (l - 1) * dn : zeros.data();
      const T* al = decay.data() + s * dn;
      T* gBl = g.B.data() + r * N;
      T* gCl = g.C.data() + r * N;
      for (int d = 0; d < D; ++d) {
        const T gyd = gyl[d];
        const T delta = dl[d];
        const T u = ul[d];
        const std::size_t off = static_cast<std::size_t>(d) * N;
        const T* Ad = in.A.data() + off;
        T* gxd = gx.data() + off;
        T* gAd = g.A.data() + off;
        T gdelta = 0;
        T gu = 0;
        for (int n = 0; n < N; ++n) {
          gCl[n] += gyd * xl[off + n];
          const T gxn = gxd[n] + gyd * Cl[n];
          const T a = al[off + n];
          const T ga = gxn * xprev[off + n] * a;
          gdelta += ga * Ad[n] + gxn * Bl[n] * u;
          gAd[n] += ga * delta;
          gBl[n] += gxn * delta * u;
          gu += gxn * delta * Bl[n];
          gxd[n] = gxn * a;
        }
        g.delta[r * D + d] = gdelta;
        g.u[r * D + d] = gu;
      }
    }
  }
}

}  // namespace

template <class T>
void scan_forward(const ScanInputs<T>& in, std::span<T> y, std::span<T> states) {
  in.validate();
  const std::size_t dn = static_cast<std::size_t>(in.channels) * in.state_dim;
  require_size(y.size(), static_cast<std::size_t>(in.length) * in.channels, "y");
  if (!states.empty()) require_size(states.size(), static_cast<std::size_t>(in.length) * dn, "states");
  switch (in.state_dim) {
    case 4: return forward_kernel<T, 4>(in, y, states);
    case 8: return forward_kernel<T, 8>(in, y, states);
    case 16: return forward_kernel<T, 16>(in, y, states);
    default: return forward_kernel<T, 0>(in, y, states);
  }
}

template <class T>
ScanGradients<T> scan_backward(const ScanInputs<T>& in, std::span<const T> states, std::span<const T> grad_y) {
  in.validate();
  const int L = in.length, D = in.channels, N = in.state_dim;
  const std::size_t dn = static_cast<std::size_t>(D) * N;
  require_size(states.size(), static_cast<std::size_t>(L) * dn, "states");
  require_size(grad_y.size(), static_cast<std::size_t>(L) * D, "grad_y");

  ScanGradients<T> g;
  g.u.assign(static_cast<std::size_t>(L) * D, T(0));
  g.delta.assign(static_cast<std::size_t>(L) * D, T(0));
  g.A.assign(dn, T(0));
  g.B.assign(static_cast<std::size_t>(L) * N, T(0));
  g.C.assign(static_cast<std::size_t>(L) * N, T(0));
  switch (N) {
    case 4: backward_kernel<T, 4>(in, states, grad_y, g); break;
    case 8: backward_kernel<T, 8>(in, states, grad_y, g); break;
    case 16: backward_kernel<T, 16>(in, states, grad_y, g); break;
    default: backward_kernel<T, 0>(in, states, grad_y, g); break;
  }
  return g;
}

template <class T>
Sequence<T> selective_scan(const Sequence<T>& u, const SSMParams<T>& params) {
  const Projections<T> proj = project(u, params);
  ScanInputs<T> in{u.length, params.channels, params.state_dim, u.data, proj.delta.data,
                   params.A, proj.B.data, proj.C.data, {}};
  Sequence<T> y(u.length, u.channels);
  scan_forward<T>(in, y.data);
  return y;
}

#define CLOUDMAMBA_INSTANTIATE_SCAN(T)                                                                           \
  template T softplus<T>(T);                                                                                     \
  template struct SSMParams<T>;                                                                                  \
  template struct ScanInputs<T>;                                                                                 \
  template Discretized<T> discretize<T>(std::span<const T>, std::span<const T>, std::span<const T>, int, int,   \
                                        int);                                                                    \
  template Projections<T> project<T>(const Sequence<T>&, const SSMParams<T>&);                                 \
  template void scan_forward<T>(const ScanInputs<T>&, std::span<T>, std::span<T>);                              \
  template ScanGradients<T> scan_backward<T>(const ScanInputs<T>&, std::span<const T>, std::span<const T>);     \
  template Sequence<T> selective_scan<T>(const Sequence<T>&, const SSMParams<T>&);

CLOUDMAMBA_INSTANTIATE_SCAN(float)
CLOUDMAMBA_INSTANTIATE_SCAN(double)

#undef CLOUDMAMBA_INSTANTIATE_SCAN

}  // namespace cloudmamba::ssm
