#include "fmpestf/attconv.hpp"

#include "fmpestf/errors.hpp"

namespace fmpestf {

AttConvBlock::AttConvBlock(ParameterStore& store, const std::string& prefix,
                           const AttConvConfig& config, Initializer& init)
    : config_(config) {
  const std::size_t c = config.channels;
  if (c == 0 || config.k1 == 0 || config.k2 == 0) {
    throw ConfigError("att-conv needs positive channels and kernel sizes");
  }
  conv1_w_ = &store.add(prefix + ".conv1.weight", init.fan_in({c, c, config.k1}, c * config.k1));
  conv1_b_ = &store.add(prefix + ".conv1.bias", init.fan_in({c}, c * config.k1));
  if (config.use_attention) {
    q_w_ = &store.add(prefix + ".query.weight", init.fan_in({c, c}, c));
    q_b_ = &store.add(prefix + ".query.bias", init.fan_in({c}, c));
    k_w_ = &store.add(prefix + ".key.weight", init.fan_in({c, c}, c));
    k_b_ = &store.add(prefix + ".key.bias", init.fan_in({c}, c));
    v_w_ = &store.add(prefix + ".value.weight", init.fan_in({c, c}, c));
    v_b_ = &store.add(prefix + ".value.bias", init.fan_in({c}, c));
  }
  conv2_w_ = &store.add(prefix + ".conv2.weight", init.fan_in({c, c, config.k2}, c * config.k2));
  conv2_b_ = &store.add(prefix + ".conv2.bias", init.fan_in({c}, c * config.k2));
}

void AttConvBlock::check_input(const Var& h) const {
  const Shape& s = h.shape();
  if (s.size() != 3 || s[0] != config_.channels || s[2] == 0) {
    throw DimensionError("att-conv expects [" + std::to_string(config_.channels) +
                         ", N, t>=1], got " + shape_string(s));
  }
}

Var AttConvBlock::attend(Var x) const {
  if (!config_.use_attention) return x;
  Tape& tape = *x.tape();
  Var q = ops::linear(x, tape.parameter(*q_w_), tape.parameter(*q_b_), 0);
  Var k = ops::linear(x, tape.parameter(*k_w_), tape.parameter(*k_b_), 0);
  Var v = ops::linear(x, tape.parameter(*v_w_), tape.parameter(*v_b_), 0);
  return ops::time_attention(q, k, v);
}

Var AttConvBlock::forward(Var h) const {
  check_input(h);
  Tape& tape = *h.tape();
  Var x = ops::time_conv(h, tape.parameter(*conv1_w_), tape.parameter(*conv1_b_));
  x = attend(x);
  return ops::time_conv(x, tape.parameter(*conv2_w_), tape.parameter(*conv2_b_));
}

Tensor AttConvBlock::attention_scores(const Tensor& h) const {
  if (!config_.use_attention) throw ContractError("attention scores requested from a block without attention");
  Tape tape;
  Var in = tape.constant(h);
  check_input(in);
  Var x = ops::time_conv(in, tape.parameter(*conv1_w_), tape.parameter(*conv1_b_));
  Var q = ops::linear(x, tape.parameter(*q_w_), tape.parameter(*q_b_), 0);
  Var k = ops::linear(x, tape.parameter(*k_w_), tape.parameter(*k_b_), 0);
  return ops::time_attention_weights(q.value(), k.value());
}

}  // namespace fmpestf
