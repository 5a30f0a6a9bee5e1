#include "cloudmamba/ssm/cross_scan.hpp"

#include <string>

#include "cloudmamba/error.hpp"

namespace cloudmamba::ssm {

std::vector<int> scan_order(ScanDirection dir, int height, int width) {
  if (height < 1 || width < 1) throw ShapeError("scan_order: height and width must be >= 1");
  const int n = height * width;
  std::vector<int> order(n);
  const bool column = dir == ScanDirection::kColumnMajor || dir == ScanDirection::kColumnMajorReversed;
  for (int i = 0; i < n; ++i) {
    if (column) {
      const int x = i / height;
      const int y = i % height;
      order[i] = y * width + x;
    } else {
      order[i] = i;
    }
  }
  if (dir == ScanDirection::kRowMajorReversed || dir == ScanDirection::kColumnMajorReversed) {
    std::vector<int> reversed(order.rbegin(), order.rend());
    order.swap(reversed);
  }
  return order;
}

template <class T>
ScanSequences<T> cross_scan(const FeatureMap<T>& map) {
  if (map.height < 1 || map.width < 1 || map.channels < 1) throw ShapeError("cross_scan: empty feature map");
  if (map.data.size() != static_cast<std::size_t>(map.height) * map.width * map.channels) {
    throw ShapeError("cross_scan: feature buffer does not match its dimensions");
  }
  ScanSequences<T> out;
  out.height = map.height;
  out.width = map.width;
  const int n = map.height * map.width;
  const int c = map.channels;
  for (int k = 0; k < 4; ++k) {
    const auto order = scan_order(kScanDirections[k], map.height, map.width);
    Sequence<T> seq(n, c);
    for (int i = 0; i < n; ++i) {
      const T* src = map.data.data() + static_cast<std::size_t>(order[i]) * c;
      std::copy(src, src + c, seq.data.begin() + static_cast<std::size_t>(i) * c);
    }
    out.directions[k] = std::move(seq);
  }
  return out;
}

template <class T>
FeatureMap<T> cross_merge(const ScanSequences<T>& seqs, int height, int width) {
  if (height < 1 || width < 1) throw ShapeError("cross_merge: height and width must be >= 1");
  const int n = height * width;
  const int c = seqs.directions[0].channels;
  for (int k = 0; k < 4; ++k) {
    const auto& s = seqs.directions[k];
    if (s.length != n || s.channels != c || s.data.size() != static_cast<std::size_t>(n) * c) {
      throw ShapeError("cross_merge: direction " + std::to_string(k) + " has length " + std::to_string(s.length) +
                       ", expected " + std::to_string(n));
    }
  }
  FeatureMap<T> out(height, width, c);
  for (int k = 0; k < 4; ++k) {
    const auto order = scan_order(kScanDirections[k], height, width);
    const auto& s = seqs.directions[k];
    for (int i = 0; i < n; ++i) {
      T* dst = out.data.data() + static_cast<std::size_t>(order[i]) * c;
      const T* src = s.data.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) dst[j] += src[j];
    }
  }
  return out;
}

template <class T>
FeatureMap<T> ss2d(const FeatureMap<T>& map, const DirectionScan<T>& scan) {
  ScanSequences<T> seqs = cross_scan(map);
  for (int k = 0; k < 4; ++k) seqs.directions[k] = scan(k, seqs.directions[k]);
  return cross_merge(seqs, map.height, map.width);
}

template <class T>
FeatureMap<T> ss2d(const FeatureMap<T>& map, const std::array<SSMParams<T>, 4>& params) {
  return ss2d<T>(map, [&](int k, const Sequence<T>& s) { return selective_scan(s, params[k]); });
}

#define CLOUDMAMBA_INSTANTIATE_CROSS(T)                                           \
  template ScanSequences<T> cross_scan<T>(const FeatureMap<T>&);                 \
  template FeatureMap<T> cross_merge<T>(const ScanSequences<T>&, int, int);      \
  template FeatureMap<T> ss2d<T>(const FeatureMap<T>&, const DirectionScan<T>&);

CLOUDMAMBA_INSTANTIATE_CROSS(float)
CLOUDMAMBA_INSTANTIATE_CROSS(double)
CLOUDMAMBA_INSTANTIATE_CROSS(int)
template FeatureMap<float> ss2d<float>(const FeatureMap<float>&, const std::array<SSMParams<float>, 4>&);
template FeatureMap<double> ss2d<double>(const FeatureMap<double>&, const std::array<SSMParams<double>, 4>&);

#undef CLOUDMAMBA_INSTANTIATE_CROSS

}  // namespace cloudmamba::ssm
