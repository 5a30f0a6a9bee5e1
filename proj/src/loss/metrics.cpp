#include "cloudmamba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace cloudmamba::metrics {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) noexcept {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) noexcept { return a += b; }

ConfusionCounts confusion_counts(const BinaryMask& prediction, const BinaryMask& label) {
  if (!prediction.same_shape(label)) {
    throw ShapeError("confusion_counts: prediction " + std::to_string(prediction.height) + "x" +
                     std::to_string(prediction.width) + " vs label " + std::to_string(label.height) + "x" +
                     std::to_string(label.width));
  }
  // Index 2·label + prediction.
  std::uint64_t tally[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < label.data.size(); ++i) {
    const unsigned p = prediction.data[i], y = label.data[i];
    if (p > 1 || y > 1) throw DomainError("confusion_counts: masks must be binary");
    ++tally[2 * y + p];
  }
  return {tally[3], tally[0], tally[1], tally[2]};
}

namespace {

void require_nonempty(const ConfusionCounts& c) {
  if (c.total() == 0) throw InvalidParameter("metrics are undefined for all-zero confusion counts");
}

double ratio_or_one(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double miou(const ConfusionCounts& c) {
  require_nonempty(c);
  return 0.5 * (ratio_or_one(c.tp, c.tp + c.fp + c.fn) + ratio_or_one(c.tn, c.tn + c.fp + c.fn));
}

double f1(const ConfusionCounts& c) {
  require_nonempty(c);
  return ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn);
}

double oa(const ConfusionCounts& c) {
  require_nonempty(c);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

std::vector<int> hard_subset(const std::vector<double>& mean_uncertainty, double fraction) {
  if (mean_uncertainty.empty()) throw InvalidParameter("hard_subset: empty uncertainty list");
  if (!(fraction > 0 && fraction <= 1)) {
    throw InvalidParameter("hard_subset: fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  for (double u : mean_uncertainty)
    if (!std::isfinite(u)) throw DomainError("hard_subset: non-finite uncertainty score");
  const std::size_t n = mean_uncertainty.size();
  // 0.1 · 30 evaluates to 3.0000000000000004; the slack keeps ⌈·⌉ at 3.
  const double raw = fraction * static_cast<double>(n);
  std::size_t k = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return mean_uncertainty[a] > mean_uncertainty[b]; });
  idx.resize(k);
  return idx;
}

}  // namespace cloudmamba::metrics
