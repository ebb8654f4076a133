#include "fmpestf/fusion_graph.hpp"

#include <cmath>

#include "fmpestf/errors.hpp"

namespace fmpestf {

Var spatial_sim(Var x, Var y) {
  const Shape& sx = x.shape();
  const Shape& sy = y.shape();
  if (sx.size() != 2 || sx != sy) {
    throw DimensionError("spatial_sim expects two [C, N] inputs, got " + shape_string(sx) + " and " +
                         shape_string(sy));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(sx[0]));
  Var scores = ops::scale(ops::matmul(ops::transpose(x), y), inv_sqrt);
  return ops::softmax(ops::relu(scores), 1);
}

FusionGraphBlock::FusionGraphBlock(ParameterStore& store, const std::string& prefix,
                                   const FusionGraphConfig& config, Initializer& init)
    : config_(config) {
  const std::size_t c = config.channels;
  if (!config.use_prompt && !config.use_dynamic) {
    throw ConfigError("fusion graph needs the prompt or the dynamic matrices (or both)");
  }
  if (c == 0 || config.nodes == 0 || config.top_k == 0) {
    throw ConfigError("fusion graph needs positive channels, nodes and top_k");
  }
  std::size_t sources = 0;
  if (config.use_prompt) ++sources;
  if (config.use_dynamic) {
    collapse_w_ = &store.add(prefix + ".collapse.weight", init.fan_in({c, c}, c));
    collapse_b_ = &store.add(prefix + ".collapse.bias", init.fan_in({c}, c));
    pattern_bank_ = &store.add(prefix + ".pattern_bank", init.fan_in({c, config.nodes}, c));
    sources += 2;
  }
  // Start from an even blend of the sources so no row begins fully clipped by relu.
  mix_w_ = &store.add(prefix + ".mix.weight",
                      Tensor({1, sources}, 1.0 / static_cast<double>(sources)));
  mix_b_ = &store.add(prefix + ".mix.bias", Tensor({1}, 0.0));
  for (std::size_t k = 0; k <= config.diffusion_steps; ++k) {
    diffusion_w_.push_back(
        &store.add(prefix + ".diffusion." + std::to_string(k) + ".weight", init.fan_in({c, c}, c)));
  }
}

Var FusionGraphBlock::collapse_time(Var h) const {
  if (!collapse_w_) throw ContractError("collapse_time used on a block without dynamic matrices");
  const Shape& s = h.shape();
  if (s.size() != 3 || s[0] != config_.channels || s[2] == 0) {
    throw DimensionError("collapse_time expects [" + std::to_string(config_.channels) +
                         ", N, t>=1], got " + shape_string(s));
  }
  Tape& tape = *h.tape();
  return ops::linear(ops::sum(h, 2), tape.parameter(*collapse_w_), tape.parameter(*collapse_b_), 0);
}

Var FusionGraphBlock::build_fusion_matrix(Var h_f, Var prompt) const {
  std::vector<Var> sources;
  Tape* tape = nullptr;
  const std::size_t n = config_.nodes;
  if (config_.use_prompt) {
    if (!prompt.valid()) throw ContractError("fusion graph needs an adjacency prompt");
    if (prompt.shape() != Shape{n, n}) {
      throw DimensionError("adjacency prompt " + shape_string(prompt.shape()) + " vs " +
                           std::to_string(n) + " nodes");
    }
    tape = prompt.tape();
    sources.push_back(ops::reshape(prompt, {1, n, n}));
  }
  if (config_.use_dynamic) {
    if (!h_f.valid()) throw ContractError("fusion graph needs the collapsed representation");
    if (h_f.shape() != Shape{config_.channels, n}) {
      throw DimensionError("collapsed representation " + shape_string(h_f.shape()) + " vs [" +
                           std::to_string(config_.channels) + ", " + std::to_string(n) + "]");
    }
    tape = h_f.tape();
    Var pattern = spatial_sim(h_f, tape->parameter(*pattern_bank_));
    Var self = spatial_sim(h_f, h_f);
    sources.push_back(ops::reshape(pattern, {1, n, n}));
    sources.push_back(ops::reshape(self, {1, n, n}));
  }
  Var stacked = sources.size() == 1 ? sources.front() : ops::concat(sources, 0);
  Var mixed = ops::linear(stacked, tape->parameter(*mix_w_), tape->parameter(*mix_b_), 0);
  Var fused = ops::relu(ops::reshape(mixed, {n, n}));
  return ops::row_normalize(ops::topk_rows(fused, config_.top_k));
}

Var FusionGraphBlock::diffusion(Var h, Var fusion) const {
  const Shape& s = h.shape();
  if (s.size() != 3 || s[0] != config_.channels) {
    throw DimensionError("diffusion expects [" + std::to_string(config_.channels) + ", N, t], got " +
                         shape_string(s));
  }
  Tape& tape = *h.tape();
  Var state = h;
  Var out = ops::linear(state, tape.parameter(*diffusion_w_[0]), {}, 0);
  for (std::size_t k = 1; k <= config_.diffusion_steps; ++k) {
    state = ops::node_propagate(fusion, state);
    out = ops::add(out, ops::linear(state, tape.parameter(*diffusion_w_[k]), {}, 0));
  }
  return out;
}

Var FusionGraphBlock::forward(Var h, Var prompt, GraphTrace* trace, const std::string& label) const {
  Var h_f = config_.use_dynamic ? collapse_time(h) : Var{};
  Var fusion = build_fusion_matrix(h_f, config_.use_prompt ? prompt : Var{});
  if (trace) trace->matrices.emplace_back(label, fusion.value());
  return ops::add(diffusion(h, fusion), h);
}

FusionMatrix FusionGraphBlock::fusion_matrix(const Tensor& h, const Tensor& prompt) const {
  Tape tape(false);
  Var in = tape.constant(h);
  Var h_f = config_.use_dynamic ? collapse_time(in) : Var{};
  Var p = config_.use_prompt ? tape.constant(prompt) : Var{};
  FusionMatrix out;
  out.matrix = build_fusion_matrix(h_f, p).value();
  out.top_k = config_.top_k;
  out.from_prompt = config_.use_prompt;
  out.from_pattern_bank = config_.use_dynamic;
  out.from_self_similarity = config_.use_dynamic;
  return out;
}

}  // namespace fmpestf
