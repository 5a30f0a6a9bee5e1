#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "cloudmamba/error.hpp"

namespace cloudmamba {

using Real = double;

// Dense row-major array. Feature maps are rank 3 in H×W×C order, sequences
// are rank 2 in L×D order, scalars are rank 1 with a single element.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, Real fill = 0);
  Tensor(std::vector<int> shape, std::vector<Real> values);

  static Tensor scalar(Real v) { return Tensor({1}, v); }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-3 accessors.
  int height() const { return dim(0); }
  int width() const { return dim(1); }
  int channels() const { return dim(2); }
  Real& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2] + c]; }
  Real at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2] + c];
  }

  void fill(Real v);
  Tensor reshaped(std::vector<int> shape) const;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

 private:
  std::vector<int> shape_;
  std::vector<Real> data_;
};

std::string shape_string(const std::vector<int>& shape);
std::size_t shape_size(const std::vector<int>& shape);

// Two-dimensional H×W raster used for probability, uncertainty and mask maps.
template <class T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  T& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  bool same_shape(int h, int w) const noexcept { return h == height && w == width; }
  template <class U>
  bool same_shape(const Grid<U>& o) const noexcept {
    return o.height == height && o.width == width;
  }
  bool operator==(const Grid&) const = default;
};

using ProbabilityMap = Grid<Real>;
using UncertaintyMap = Grid<Real>;
using BinaryMask = Grid<std::uint8_t>;

// Converts an H×W×1 tensor to a grid and back.
ProbabilityMap to_grid(const Tensor& t);
Tensor to_tensor(const ProbabilityMap& g);

}  // namespace cloudmamba
