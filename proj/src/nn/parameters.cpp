#include "cloudmamba/nn/parameters.hpp"

namespace cloudmamba::nn {

ag::Var ParameterStore::add(const std::string& name, Tensor initial) {
  if (contains(name)) throw InvalidParameter("duplicate parameter name '" + name + "'");
  ag::Var v = ag::Var::parameter(std::move(initial));
  index_.emplace(name, entries_.size());
  entries_.push_back({name, v});
  return v;
}

ag::Var ParameterStore::normal(const std::string& name, std::vector<int> shape, Real stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<Real> dist(0, stddev);
  for (auto& v : t.storage()) v = dist(rng_);
  return add(name, std::move(t));
}

ag::Var ParameterStore::constant(const std::string& name, std::vector<int> shape, Real value) {
  return add(name, Tensor(std::move(shape), value));
}

ag::Var ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidParameter("unknown parameter '" + name + "'");
  return entries_[it->second].var;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

}  // namespace cloudmamba::nn
