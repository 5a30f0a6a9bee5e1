#pragma once

// Four-direction unfolding of a 2-D feature map (cross-scan), its inverse
// refold-and-sum (cross-merge), and the composed SS2D operator.

#include <array>
#include <functional>
#include <vector>

#include "cloudmamba/ssm/selective_scan.hpp"

namespace cloudmamba::ssm {

enum class ScanDirection : int {
  kRowMajor = 0,         // left to right
  kColumnMajor = 1,      // top to bottom
  kRowMajorReversed = 2, // right to left
  kColumnMajorReversed = 3,  // bottom to top
};

inline constexpr std::array<ScanDirection, 4> kScanDirections = {
    ScanDirection::kRowMajor, ScanDirection::kColumnMajor, ScanDirection::kRowMajorReversed,
    ScanDirection::kColumnMajorReversed};

// order[i] is the row-major pixel index visited at sequence position i.
std::vector<int> scan_order(ScanDirection dir, int height, int width);

// H×W×C row-major map.
template <class T>
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  T& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  T at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

template <class T>
struct ScanSequences {
  int height = 0;
  int width = 0;
  std::array<Sequence<T>, 4> directions;
};

template <class T>
ScanSequences<T> cross_scan(const FeatureMap<T>& map);

template <class T>
FeatureMap<T> cross_merge(const ScanSequences<T>& seqs, int height, int width);

// Applies `scan` to every direction independently, then merges.
template <class T>
using DirectionScan = std::function<Sequence<T>(int direction, const Sequence<T>&)>;

template <class T>
FeatureMap<T> ss2d(const FeatureMap<T>& map, const DirectionScan<T>& scan);

// SS2D with one independent S6 parameter set per direction.
template <class T>
FeatureMap<T> ss2d(const FeatureMap<T>& map, const std::array<SSMParams<T>, 4>& params);

}  // namespace cloudmamba::ssm
