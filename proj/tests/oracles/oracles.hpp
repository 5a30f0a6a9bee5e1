#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. They are written straight from the defining formulas with plain
// loops and share no code with the library beyond its data types.

#include <functional>
#include <set>
#include <vector>

#include "cloudmamba/autograd.hpp"
#include "cloudmamba/metrics.hpp"
#include "cloudmamba/ssm/cross_scan.hpp"

namespace oracle {

using cloudmamba::Real;

// Per-step recurrence in long double: x = exp(Δ·A)·x + Δ·B·u, y = C·x.
// All arrays row-major: u, delta L×D; A D×N; B, C L×N.
template <class T>
std::vector<long double> scan(int L, int D, int N, const std::vector<T>& u, const std::vector<T>& delta,
                              const std::vector<T>& A, const std::vector<T>& B, const std::vector<T>& C);

// Full S6 layer: Δ = softplus(u·down·up + bias), B = u·B_proj, C = u·C_proj,
// then the recurrence above.
template <class T>
std::vector<long double> s6(const cloudmamba::ssm::Sequence<T>& u, const cloudmamba::ssm::SSMParams<T>& p);

// Pixel coordinates (y, x) in the visiting order of each direction,
// enumerated geometrically.
std::vector<std::pair<int, int>> direction_path(int direction, int H, int W);

// ss2d from the per-direction oracle scans: unfold along direction_path,
// scan, write back to the visited pixel, sum.
template <class T>
std::vector<long double> ss2d(const cloudmamba::ssm::FeatureMap<T>& map,
                              const std::array<cloudmamba::ssm::SSMParams<T>, 4>& params);

// Metrics from pixel index sets instead of confusion counts.
struct SetMetrics {
  double miou;
  double f1;
  double oa;
};
SetMetrics set_metrics(const cloudmamba::BinaryMask& prediction, const cloudmamba::BinaryMask& label);

// Central finite differences of a scalar function with respect to every
// element of `inputs`; returns the max over inputs of
// ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-12).
struct GradCheck {
  double max_relative_error = 0;
  std::string worst;  // label of the worst input
};
GradCheck check_gradients(const std::function<cloudmamba::ag::Var()>& f,
                          const std::vector<std::pair<std::string, cloudmamba::ag::Var>>& inputs, double h = 1e-3);

}  // namespace oracle
