#include "fmpestf/config.hpp"

#include "fmpestf/errors.hpp"
#include "json_fields.hpp"

namespace fmpestf {
namespace {

using detail::read_field;
using detail::reject_unknown;

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void ModelConfig::validate() const {
  require(nodes >= 1, "model.nodes must be at least 1");
  require(input_channels >= 1, "model.input_channels must be at least 1");
  require(history >= 1, "model.history must be at least 1");
  require(horizon >= 1, "model.horizon must be at least 1");
  require(d1 >= 1, "model.d1 must be at least 1");
  require(d2 >= 1, "model.d2 must be at least 1");
  require(slots_per_day >= 1, "model.slots_per_day must be at least 1");
  require(kernel[0] >= 1 && kernel[1] >= 1, "model.kernel sizes must be at least 1");
  require(top_k >= 1, "model.top_k must be at least 1");
  require(depth <= 16, "model.depth is unreasonably large");
  require(history % (std::size_t{1} << depth) == 0,
          "model.history (" + std::to_string(history) + ") must be divisible by 2^depth (" +
              std::to_string(std::size_t{1} << depth) + ")");
  require(use_prompt || use_dynamic, "model.use_prompt and model.use_dynamic cannot both be false");
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0, "train.learning_rate must be nonnegative");
  require(batch_size >= 1, "train.batch_size must be at least 1");
  require(max_epochs >= 1, "train.max_epochs must be at least 1");
  require(patience >= 1, "train.patience must be at least 1");
  require(patience < max_epochs, "train.patience must be smaller than train.max_epochs");
  require(mask_threshold >= 0.0, "train.mask_threshold must be nonnegative");
  require(clip_norm >= 0.0, "train.clip_norm must be nonnegative");
  require(threads >= 1, "train.threads must be at least 1");
}

Ablation parse_ablation(const std::string& name) {
  if (name.empty() || name == "none") return Ablation::kNone;
  if (name == "no-att") return Ablation::kNoAttention;
  if (name == "no-adj") return Ablation::kNoPrompt;
  if (name == "no-dyn") return Ablation::kNoDynamic;
  throw ConfigError("unknown ablation '" + name + "' (expected no-att, no-adj or no-dyn)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "full";
    case Ablation::kNoAttention: return "no-att";
    case Ablation::kNoPrompt: return "no-adj";
    case Ablation::kNoDynamic: return "no-dyn";
  }
  return "full";
}

ModelConfig apply_ablation(ModelConfig config, Ablation a) {
  switch (a) {
    case Ablation::kNone: break;
    case Ablation::kNoAttention: config.use_attention = false; break;
    case Ablation::kNoPrompt: config.use_prompt = false; break;
    case Ablation::kNoDynamic: config.use_dynamic = false; break;
  }
  return config;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"nodes", c.nodes},
                     {"input_channels", c.input_channels},
                     {"history", c.history},
                     {"horizon", c.horizon},
                     {"d1", c.d1},
                     {"d2", c.d2},
                     {"channels", c.channels()},
                     {"slots_per_day", c.slots_per_day},
                     {"kernel", c.kernel},
                     {"diffusion_steps", c.diffusion_steps},
                     {"top_k", c.top_k},
                     {"depth", c.depth},
                     {"use_attention", c.use_attention},
                     {"use_prompt", c.use_prompt},
                     {"use_dynamic", c.use_dynamic},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  reject_unknown(j,
                 {"nodes", "input_channels", "history", "horizon", "d1", "d2", "channels",
                  "slots_per_day", "kernel", "diffusion_steps", "top_k", "depth", "use_attention",
                  "use_prompt", "use_dynamic", "seed"},
                 "model");
  read_field(j, "nodes", c.nodes);
  read_field(j, "input_channels", c.input_channels);
  read_field(j, "history", c.history);
  read_field(j, "horizon", c.horizon);
  read_field(j, "d1", c.d1);
  read_field(j, "d2", c.d2);
  read_field(j, "slots_per_day", c.slots_per_day);
  read_field(j, "kernel", c.kernel);
  read_field(j, "diffusion_steps", c.diffusion_steps);
  read_field(j, "top_k", c.top_k);
  read_field(j, "depth", c.depth);
  read_field(j, "use_attention", c.use_attention);
  read_field(j, "use_prompt", c.use_prompt);
  read_field(j, "use_dynamic", c.use_dynamic);
  read_field(j, "seed", c.seed);
  if (j.contains("channels")) {
    std::size_t channels = 0;
    read_field(j, "channels", channels);
    require(channels == c.channels(), "model.channels must equal d1 + d2");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},       {"patience", c.patience},
                     {"mask_threshold", c.mask_threshold}, {"seed", c.seed},
                     {"clip_norm", c.clip_norm},         {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"learning_rate", "batch_size", "max_epochs", "patience", "mask_threshold", "seed",
                  "clip_norm", "threads"},
                 "train");
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "max_epochs", c.max_epochs);
  read_field(j, "patience", c.patience);
  read_field(j, "mask_threshold", c.mask_threshold);
  read_field(j, "seed", c.seed);
  read_field(j, "clip_norm", c.clip_norm);
  read_field(j, "threads", c.threads);
}

std::vector<std::string> config_differences(const ModelConfig& a, const ModelConfig& b) {
  const nlohmann::json ja = a;
  const nlohmann::json jb = b;
  std::vector<std::string> diff;
  for (const auto& [key, value] : ja.items()) {
    if (jb.at(key) != value) diff.push_back(key);
  }
  return diff;
}

}  // namespace fmpestf
