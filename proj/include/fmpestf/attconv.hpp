#pragma once

#include <string>

#include "fmpestf/autodiff.hpp"
#include "fmpestf/parameter_store.hpp"

namespace fmpestf {

struct AttConvConfig {
  std::size_t channels = 64;
  std::size_t k1 = 7;
  std::size_t k2 = 1;
  bool use_attention = true;
};

// Temporal block: conv over time -> per-node attention over time -> conv over
// time. Kernels span one node, so nodes never mix. With attention disabled the
// middle stage is the identity and no projection parameters exist.
class AttConvBlock {
 public:
  AttConvBlock(ParameterStore& store, const std::string& prefix, const AttConvConfig& config,
               Initializer& init);

  // [C, N, t] -> [C, N, t].
  Var forward(Var h) const;

  // Attention weights [N, t, t] computed from the conv1 output of h.
  // Throws ContractError when attention is disabled.
  Tensor attention_scores(const Tensor& h) const;

  const AttConvConfig& config() const { return config_; }
  Parameter& conv1_weight() const { return *conv1_w_; }
  Parameter& conv1_bias() const { return *conv1_b_; }
  Parameter& conv2_weight() const { return *conv2_w_; }
  Parameter& conv2_bias() const { return *conv2_b_; }
  Parameter* query_weight() const { return q_w_; }
  Parameter* key_weight() const { return k_w_; }
  Parameter* value_weight() const { return v_w_; }
  Parameter* value_bias() const { return v_b_; }

 private:
  void check_input(const Var& h) const;
  Var attend(Var x) const;

  AttConvConfig config_;
  Parameter* conv1_w_;
  Parameter* conv1_b_;
  Parameter* conv2_w_;
  Parameter* conv2_b_;
  Parameter* q_w_ = nullptr;
  Parameter* q_b_ = nullptr;
  Parameter* k_w_ = nullptr;
  Parameter* k_b_ = nullptr;
  Parameter* v_w_ = nullptr;
  Parameter* v_b_ = nullptr;
};

}  // namespace fmpestf
