#include "fmpestf/parameter_store.hpp"

#include <cmath>

#include "fmpestf/errors.hpp"

namespace fmpestf {

Parameter& ParameterStore::add(std::string id, Tensor init) {
  if (find(id) != nullptr) throw ContractError("duplicate parameter id " + id);
  params_.push_back(std::make_unique<Parameter>(std::move(id), std::move(init)));
  return *params_.back();
}

std::vector<Parameter*> ParameterStore::all() const {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

Parameter* ParameterStore::find(const std::string& id) const {
  for (const auto& p : params_) {
    if (p->id() == id) return p.get();
  }
  return nullptr;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p->size();
  return total;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::vector<Tensor> ParameterStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value());
  return out;
}

void ParameterStore::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw ContractError("snapshot does not match parameter store");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != params_[i]->value().shape()) {
      throw DimensionError("snapshot shape mismatch for " + params_[i]->id());
    }
    params_[i]->value() = values[i];
  }
}

Tensor Initializer::uniform(Shape shape, double bound) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng_);
  return t;
}

Tensor Initializer::fan_in(Shape shape, std::size_t fan_in) {
  return uniform(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace fmpestf
