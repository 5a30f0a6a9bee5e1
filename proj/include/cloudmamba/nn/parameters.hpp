#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "cloudmamba/autograd.hpp"

namespace cloudmamba::nn {

struct NamedParameter {
  std::string name;
  ag::Var var;
};

// Ordered registry of trainable tensors. Registration order is the
// serialization and optimizer order; initial values come from one seeded
// generator, so a (config, seed) pair fixes every starting weight.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  ag::Var add(const std::string& name, Tensor initial);
  ag::Var normal(const std::string& name, std::vector<int> shape, Real stddev);
  ag::Var constant(const std::string& name, std::vector<int> shape, Real value);

  ag::Var find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<NamedParameter>& entries() const noexcept { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();

  std::mt19937_64& rng() noexcept { return rng_; }

 private:
  std::vector<NamedParameter> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

}  // namespace cloudmamba::nn
