#include "fmpestf/model.hpp"

#include "fmpestf/errors.hpp"

namespace fmpestf {
namespace {

// Runs one forward stage, tagging numerical failures with the stage name.
template <typename Fn>
Var stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("stage ") + name + ": " + e.what());
  }
}

}  // namespace

FmpestfModel::FmpestfModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Initializer init(config_.seed);
  const std::size_t c = config_.channels();

  EmbeddingConfig emb{config_.input_channels, config_.d1, config_.d2, config_.slots_per_day};
  embedding_ = std::make_unique<DataEmbedding>(store_, "embedding", emb, init);

  STCompConfig st;
  st.temporal = AttConvConfig{c, config_.kernel[0], config_.kernel[1], config_.use_attention};
  st.spatial = FusionGraphConfig{c,
                                 config_.nodes,
                                 config_.diffusion_steps,
                                 config_.top_k,
                                 config_.use_prompt,
                                 config_.use_dynamic};
  encoder_ = std::make_unique<Encoder>(store_, "encoder", st, config_.depth, init);

  glu_a_w_ = &store_.add("decoder.glu.linear_a.weight", init.fan_in({c, c}, c));
  glu_a_b_ = &store_.add("decoder.glu.linear_a.bias", init.fan_in({c}, c));
  glu_b_w_ = &store_.add("decoder.glu.linear_b.weight", init.fan_in({c, c}, c));
  glu_b_b_ = &store_.add("decoder.glu.linear_b.bias", init.fan_in({c}, c));
  const std::size_t features = c * config_.history;
  head_w_ = &store_.add("decoder.head.weight", init.fan_in({config_.horizon, features}, features));
  head_b_ = &store_.add("decoder.head.bias", init.fan_in({config_.horizon}, features));

  normalizer_.mean.assign(config_.input_channels, 0.0);
  normalizer_.stddev.assign(config_.input_channels, 1.0);
}

void FmpestfModel::set_normalizer(Normalizer normalizer) {
  if (normalizer.mean.size() != config_.input_channels || normalizer.stddev.size() != config_.input_channels) {
    throw DimensionError("normalizer has " + std::to_string(normalizer.mean.size()) + " channels, model expects " +
                         std::to_string(config_.input_channels));
  }
  normalizer_ = std::move(normalizer);
}

Var FmpestfModel::glu(Var h) const {
  Tape& tape = *h.tape();
  Var a = ops::linear(h, tape.parameter(*glu_a_w_), tape.parameter(*glu_a_b_), 0);
  Var b = ops::linear(h, tape.parameter(*glu_b_w_), tape.parameter(*glu_b_b_), 0);
  return ops::mul(a, ops::sigmoid(b));
}

Var FmpestfModel::regress(Var h) const {
  const Shape& s = h.shape();
  if (s.size() != 3 || s[0] != config_.channels() || s[2] != config_.history) {
    throw DimensionError("regression head expects [" + std::to_string(config_.channels()) + ", N, " +
                         std::to_string(config_.history) + "], got " + shape_string(s));
  }
  Tape& tape = *h.tape();
  return ops::linear(ops::flatten_nodes(h), tape.parameter(*head_w_), tape.parameter(*head_b_), 1);
}

Var FmpestfModel::forward_normalized(Var history, std::span<const TimeIndex> time_index, Var prompt,
                                     const BranchTransform* override_transform, GraphTrace* trace) const {
  const Shape& s = history.shape();
  if (s.size() != 3 || s[0] != config_.input_channels || s[1] != config_.nodes || s[2] != config_.history) {
    throw DimensionError("model expects history [" + std::to_string(config_.input_channels) + ", " +
                         std::to_string(config_.nodes) + ", " + std::to_string(config_.history) +
                         "], got " + shape_string(s));
  }
  Var h = stage("embedding", [&] { return embedding_->forward(history, time_index); });
  Var encoded = stage("encoder", [&] { return encoder_->forward(h, prompt, override_transform, trace); });
  Var gated = stage("glu", [&] { return glu(encoded); });
  return stage("regression", [&] { return regress(gated); });
}

Var FmpestfModel::forward(Tape& tape, const SampleWindow& window, const Tensor& prompt,
                          GraphTrace* trace) const {
  Var history = tape.constant(window.history);
  Var prompt_var;
  if (config_.use_prompt) {
    if (prompt.shape() != Shape{config_.nodes, config_.nodes}) {
      throw DimensionError("adjacency prompt " + shape_string(prompt.shape()) + " vs " +
                           std::to_string(config_.nodes) + " nodes");
    }
    prompt_var = tape.constant(prompt);
  }
  Var y = forward_normalized(history, window.time_index, prompt_var, nullptr, trace);
  return stage("denormalize", [&] {
    return ops::add_scalar(ops::scale(y, normalizer_.stddev[0]), normalizer_.mean[0]);
  });
}

Tensor FmpestfModel::predict(const SampleWindow& window, const Tensor& prompt, GraphTrace* trace) const {
  Tape tape(false);
  return forward(tape, window, prompt, trace).value();
}

std::size_t FmpestfModel::expected_parameter_count(const ModelConfig& cfg) {
  const std::size_t c = cfg.channels();
  const std::size_t embedding = cfg.d1 * cfg.input_channels + cfg.d1 + cfg.slots_per_day * cfg.d2 + 7 * cfg.d2;
  std::size_t attconv = c * c * (cfg.kernel[0] + cfg.kernel[1]) + 2 * c;
  if (cfg.use_attention) attconv += 3 * (c * c + c);
  const std::size_t sources = (cfg.use_prompt ? 1 : 0) + (cfg.use_dynamic ? 2 : 0);
  std::size_t fusion = sources + 1 + (cfg.diffusion_steps + 1) * c * c;
  if (cfg.use_dynamic) fusion += c * c + c + c * cfg.nodes;
  const std::size_t modules = cfg.tree_size();
  const std::size_t glu = 2 * (c * c + c);
  const std::size_t head = cfg.horizon * c * cfg.history + cfg.horizon;
  return embedding + modules * (4 * attconv + fusion) + glu + head;
}

FmpestfModel build_variant(const ModelConfig& config) {
  if (!config.use_prompt && !config.use_dynamic) {
    throw ContractError("variant cannot drop both the adjacency prompt and the dynamic matrices");
  }
  return FmpestfModel(config);
}

}  // namespace fmpestf
