#pragma once

#include <string>
#include <vector>

#include "fmpestf/autodiff.hpp"
#include "fmpestf/parameter_store.hpp"

namespace fmpestf {

struct FusionGraphConfig {
  std::size_t channels = 64;
  std::size_t nodes = 8;
  std::size_t diffusion_steps = 2;  // K
  std::size_t top_k = 10;           // tau, max neighbours kept per row
  bool use_prompt = true;           // adjacency prompt enters the fusion
  bool use_dynamic = true;          // pattern-bank and self similarity enter the fusion
};

// Sparsified, row-normalized node relation matrix plus which sources built it.
struct FusionMatrix {
  Tensor matrix;  // [N, N]
  std::size_t top_k = 0;
  bool from_prompt = false;
  bool from_pattern_bank = false;
  bool from_self_similarity = false;
};

// row_softmax(relu(x^T y / sqrt(C))) for x, y [C, N] -> [N, N]. Row i holds
// node i's affinity to every column pattern of y.
Var spatial_sim(Var x, Var y);

// Receives each fusion matrix built during a forward pass.
struct GraphTrace {
  std::vector<std::pair<std::string, Tensor>> matrices;
};

// Spatial block: collapse time, build the fused relation matrix from the
// adjacency prompt and two dynamic similarity matrices, keep each row's top-k
// entries, row-normalize, then run K-step diffusion with per-step channel
// weights. The output adds the block input back (residual).
class FusionGraphBlock {
 public:
  FusionGraphBlock(ParameterStore& store, const std::string& prefix, const FusionGraphConfig& config,
                   Initializer& init);

  // h_g [C, N, t'] -> H_f [C, N]: sum over time, then a channel linear map.
  Var collapse_time(Var h) const;

  // The fused relation matrix A_r [N, N]. `prompt` may be invalid when the
  // prompt source is disabled; `h_f` may be invalid when the dynamic sources
  // are disabled.
  Var build_fusion_matrix(Var h_f, Var prompt) const;

  // sum_{k=0..K} (A_r^k along nodes) h W_k, shape preserved.
  Var diffusion(Var h, Var fusion) const;

  // diffusion(h, A_r(h)) + h.
  Var forward(Var h, Var prompt, GraphTrace* trace = nullptr, const std::string& label = {}) const;

  // Evaluates the fusion matrix for inspection.
  FusionMatrix fusion_matrix(const Tensor& h, const Tensor& prompt) const;

  const FusionGraphConfig& config() const { return config_; }
  Parameter* pattern_bank() const { return pattern_bank_; }
  Parameter* collapse_weight() const { return collapse_w_; }
  Parameter& mix_weight() const { return *mix_w_; }
  Parameter& mix_bias() const { return *mix_b_; }
  Parameter& diffusion_weight(std::size_t step) const { return *diffusion_w_.at(step); }

 private:
  FusionGraphConfig config_;
  Parameter* collapse_w_ = nullptr;
  Parameter* collapse_b_ = nullptr;
  Parameter* pattern_bank_ = nullptr;  // W_l [C, N]
  Parameter* mix_w_;                   // [1, sources]
  Parameter* mix_b_;                   // [1]
  std::vector<Parameter*> diffusion_w_;
};

}  // namespace fmpestf
