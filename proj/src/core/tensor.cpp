#include "cloudmamba/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace cloudmamba {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, Real fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<Real> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
  }
}

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw ShapeError("dimension index " + std::to_string(i) + " out of range for shape " + shape_string(shape_));
  return shape_[i];
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

ProbabilityMap to_grid(const Tensor& t) {
  if (t.rank() != 3 || t.channels() != 1) throw ShapeError("expected H×W×1 tensor, got " + shape_string(t.shape()));
  ProbabilityMap g(t.height(), t.width());
  std::copy(t.storage().begin(), t.storage().end(), g.data.begin());
  return g;
}

Tensor to_tensor(const ProbabilityMap& g) {
  return Tensor({g.height, g.width, 1}, g.data);
}

}  // namespace cloudmamba
