#include "oracles.hpp"

#include <cmath>

namespace oracle {

using namespace cloudmamba;

template <class T>
std::vector<long double> scan(int L, int D, int N, const std::vector<T>& u, const std::vector<T>& delta,
                              const std::vector<T>& A, const std::vector<T>& B, const std::vector<T>& C) {
  std::vector<long double> y(static_cast<std::size_t>(L) * D, 0.0L);
  for (int d = 0; d < D; ++d) {
    std::vector<long double> x(N, 0.0L);
    for (int l = 0; l < L; ++l) {
      const long double dt = delta[l * D + d], ul = u[l * D + d];
      long double acc = 0;
      for (int n = 0; n < N; ++n) {
        x[n] = std::exp(dt * (long double)A[d * N + n]) * x[n] + dt * (long double)B[l * N + n] * ul;
        acc += (long double)C[l * N + n] * x[n];
      }
      y[l * D + d] = acc;
    }
  }
  return y;
}

template <class T>
std::vector<long double> s6(const ssm::Sequence<T>& u, const ssm::SSMParams<T>& p) {
  const int L = u.length, D = p.channels, N = p.state_dim, R = p.dt_rank;
  std::vector<T> delta(static_cast<std::size_t>(L) * D), B(static_cast<std::size_t>(L) * N),
      C(static_cast<std::size_t>(L) * N);
  for (int l = 0; l < L; ++l) {
    std::vector<long double> low(R, 0.0L);
    for (int r = 0; r < R; ++r)
      for (int d = 0; d < D; ++d) low[r] += (long double)u.at(l, d) * p.delta_down[d * R + r];
    for (int d = 0; d < D; ++d) {
      long double z = p.delta_bias[d];
      for (int r = 0; r < R; ++r) z += low[r] * p.delta_up[r * D + d];
      delta[l * D + d] = static_cast<T>(std::log1p(std::exp(z)));
    }
    for (int n = 0; n < N; ++n) {
      long double b = 0, c = 0;
      for (int d = 0; d < D; ++d) {
        b += (long double)u.at(l, d) * p.B_proj[d * N + n];
        c += (long double)u.at(l, d) * p.C_proj[d * N + n];
      }
      B[l * N + n] = static_cast<T>(b);
      C[l * N + n] = static_cast<T>(c);
    }
  }
  return scan<T>(L, D, N, u.data, delta, p.A, B, C);
}

std::vector<std::pair<int, int>> direction_path(int direction, int H, int W) {
  std::vector<std::pair<int, int>> path;
  if (direction == 0 || direction == 2) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) path.emplace_back(y, x);
  } else {
    for (int x = 0; x < W; ++x)
      for (int y = 0; y < H; ++y) path.emplace_back(y, x);
  }
  if (direction >= 2) std::reverse(path.begin(), path.end());
  return path;
}

template <class T>
std::vector<long double> ss2d(const ssm::FeatureMap<T>& map, const std::array<ssm::SSMParams<T>, 4>& params) {
  const int H = map.height, W = map.width, C = map.channels;
  std::vector<long double> out(static_cast<std::size_t>(H) * W * C, 0.0L);
  for (int k = 0; k < 4; ++k) {
    const auto path = direction_path(k, H, W);
    ssm::Sequence<T> seq(H * W, C);
    for (int i = 0; i < H * W; ++i)
      for (int c = 0; c < C; ++c) seq.at(i, c) = map.at(path[i].first, path[i].second, c);
    const auto y = s6<T>(seq, params[k]);
    for (int i = 0; i < H * W; ++i)
      for (int c = 0; c < C; ++c)
        out[(static_cast<std::size_t>(path[i].first) * W + path[i].second) * C + c] += y[i * C + c];
  }
  return out;
}

SetMetrics set_metrics(const BinaryMask& prediction, const BinaryMask& label) {
  const int n = static_cast<int>(label.size());
  std::set<int> P, Y, Pc, Yc, all;
  for (int i = 0; i < n; ++i) {
    all.insert(i);
    (prediction[i] ? P : Pc).insert(i);
    (label[i] ? Y : Yc).insert(i);
  }
  auto inter = [](const std::set<int>& a, const std::set<int>& b) {
    std::size_t k = 0;
    for (int v : a) k += b.count(v);
    return k;
  };
  auto uni = [&](const std::set<int>& a, const std::set<int>& b) { return a.size() + b.size() - inter(a, b); };
  auto iou = [&](const std::set<int>& a, const std::set<int>& b) {
    const std::size_t u = uni(a, b);
    return u == 0 ? 1.0 : double(inter(a, b)) / double(u);
  };
  SetMetrics m;
  m.miou = 0.5 * (iou(P, Y) + iou(Pc, Yc));
  const std::size_t denom = P.size() + Y.size();
  m.f1 = denom == 0 ? 1.0 : double(2 * inter(P, Y)) / double(denom);
  m.oa = double(inter(P, Y) + inter(Pc, Yc)) / double(all.size());
  return m;
}

GradCheck check_gradients(const std::function<ag::Var()>& f,
                          const std::vector<std::pair<std::string, ag::Var>>& inputs, double h) {
  for (const auto& [name, v] : inputs) ag::Var(v).zero_grad();
  ag::backward(f());
  GradCheck result;
  for (const auto& [name, v] : inputs) {
    ag::Var var = v;
    const Tensor analytic = var.grad();
    Tensor& value = var.mutable_value();
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const Real keep = value[i];
      Real plus, minus;
      {
        ag::NoGradGuard g;
        value[i] = keep + h;
        plus = f().value()[0];
        value[i] = keep - h;
        minus = f().value()[0];
      }
      value[i] = keep;
      const double numeric = (plus - minus) / (2 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    if (rel >= result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst = name;
    }
  }
  return result;
}

template std::vector<long double> scan<float>(int, int, int, const std::vector<float>&, const std::vector<float>&,
                                              const std::vector<float>&, const std::vector<float>&,
                                              const std::vector<float>&);
template std::vector<long double> scan<double>(int, int, int, const std::vector<double>&, const std::vector<double>&,
                                               const std::vector<double>&, const std::vector<double>&,
                                               const std::vector<double>&);
template std::vector<long double> s6<float>(const ssm::Sequence<float>&, const ssm::SSMParams<float>&);
template std::vector<long double> s6<double>(const ssm::Sequence<double>&, const ssm::SSMParams<double>&);
template std::vector<long double> ss2d<float>(const ssm::FeatureMap<float>&, const std::array<ssm::SSMParams<float>, 4>&);
template std::vector<long double> ss2d<double>(const ssm::FeatureMap<double>&,
                                               const std::array<ssm::SSMParams<double>, 4>&);

}  // namespace oracle
