#pragma once

#include <memory>
#include <span>

#include "fmpestf/config.hpp"
#include "fmpestf/data.hpp"
#include "fmpestf/embedding.hpp"
#include "fmpestf/encoder.hpp"
#include "fmpestf/parameter_store.hpp"

namespace fmpestf {

// Embedding -> ST-Comp encoder -> GLU -> per-node regression head.
//
// Parameter count for channels C = d1 + d2, S = fusion sources
// (prompt + 2 when dynamic), M = 2^depth - 1 modules:
//   embedding   d1*D + d1 + slots_per_day*d2 + 7*d2
//   att-conv    C*C*(k1 + k2) + 2C [+ 3(C*C + C) with attention], 4 per module
//   fusion      S + 1 + (K+1)*C*C [+ C*C + C + C*N when dynamic], 1 per module
//   GLU         2(C*C + C)
//   head        T'*C*T + T'
class FmpestfModel {
 public:
  explicit FmpestfModel(const ModelConfig& config);

  FmpestfModel(FmpestfModel&&) = default;
  FmpestfModel& operator=(FmpestfModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  // Target-channel statistics used to return forecasts in raw units.
  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer normalizer);

  Var glu(Var h) const;
  // [C, N, T] -> [N, T'] with one linear map shared by all nodes.
  Var regress(Var h) const;

  // Normalized history [D, N, T] -> forecast [N, T] in normalized units.
  // `override_transform` replaces the encoder arrows (wiring tests).
  Var forward_normalized(Var history, std::span<const TimeIndex> time_index, Var prompt,
                         const BranchTransform* override_transform = nullptr,
                         GraphTrace* trace = nullptr) const;

  // Full forward in raw units. The prompt may be invalid when the model does
  // not use it.
  Var forward(Tape& tape, const SampleWindow& window, const Tensor& prompt,
              GraphTrace* trace = nullptr) const;

  Tensor predict(const SampleWindow& window, const Tensor& prompt, GraphTrace* trace = nullptr) const;

  const DataEmbedding& embedding() const { return *embedding_; }
  const Encoder& encoder() const { return *encoder_; }

  static std::size_t expected_parameter_count(const ModelConfig& config);

 private:
  ModelConfig config_;
  ParameterStore store_;
  Normalizer normalizer_;
  std::unique_ptr<DataEmbedding> embedding_;
  std::unique_ptr<Encoder> encoder_;
  Parameter* glu_a_w_;
  Parameter* glu_a_b_;
  Parameter* glu_b_w_;
  Parameter* glu_b_b_;
  Parameter* head_w_;  // [T', C*T]
  Parameter* head_b_;  // [T']
};

// Model with the structure named by the ablation flags removed.
FmpestfModel build_variant(const ModelConfig& config);

}  // namespace fmpestf
