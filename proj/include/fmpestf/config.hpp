#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fmpestf {

struct ModelConfig {
  std::size_t nodes = 8;           // N
  std::size_t input_channels = 1;  // D
  std::size_t history = 12;        // T
  std::size_t horizon = 12;        // T'
  std::size_t d1 = 32;
  std::size_t d2 = 32;
  std::size_t slots_per_day = 288;
  std::array<std::size_t, 2> kernel{7, 1};
  std::size_t diffusion_steps = 2;  // K
  std::size_t top_k = 10;           // tau
  std::size_t depth = 2;            // ST-Comp tree depth; 2 gives 1 root + 2 children
  bool use_attention = true;
  bool use_prompt = true;
  bool use_dynamic = true;
  std::uint64_t seed = 0;

  std::size_t channels() const { return d1 + d2; }
  std::size_t tree_size() const { return (std::size_t{1} << depth) - 1; }

  // Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 300;
  std::size_t patience = 20;
  double mask_threshold = 0.0;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;  // 0 disables clipping
  std::size_t threads = 1;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Ablation flag names accepted on the command line.
enum class Ablation { kNone, kNoAttention, kNoPrompt, kNoDynamic };
Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);
ModelConfig apply_ablation(ModelConfig config, Ablation a);

void to_json(nlohmann::json& j, const ModelConfig& c);
// Unknown keys are rejected; missing keys keep their defaults.
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Names of fields whose values differ.
std::vector<std::string> config_differences(const ModelConfig& a, const ModelConfig& b);

}  // namespace fmpestf
