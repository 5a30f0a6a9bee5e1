#pragma once

// Binary segmentation metrics with cloud (1) as the positive class.

#include <cstdint>
#include <vector>

#include "cloudmamba/tensor.hpp"

namespace cloudmamba::metrics {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept;
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) noexcept;

// DomainError on non-binary masks, ShapeError on size mismatch.
ConfusionCounts confusion_counts(const BinaryMask& prediction, const BinaryMask& label);

// A class absent from both prediction and label scores IoU 1; F1 with
// TP = FP = FN = 0 is 1. All-zero counts raise InvalidParameter.
double miou(const ConfusionCounts& c);
double f1(const ConfusionCounts& c);
double oa(const ConfusionCounts& c);

// Indices of the ⌈fraction·n⌉ images with the largest mean uncertainty,
// ordered by descending score with ties broken by ascending index.
std::vector<int> hard_subset(const std::vector<double>& mean_uncertainty, double fraction = 0.10);

}  // namespace cloudmamba::metrics
