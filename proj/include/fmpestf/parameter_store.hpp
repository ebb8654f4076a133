#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fmpestf/autodiff.hpp"

namespace fmpestf {

// Owns a model's parameters in creation order. Addresses are stable for the
// lifetime of the store, including across moves.
class ParameterStore {
 public:
  Parameter& add(std::string id, Tensor init);

  std::vector<Parameter*> all() const;
  Parameter* find(const std::string& id) const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// Seeded source of initial parameter values.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(Shape shape, double bound);
  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor fan_in(Shape shape, std::size_t fan_in);

 private:
  std::mt19937_64 rng_;
};

}  // namespace fmpestf
