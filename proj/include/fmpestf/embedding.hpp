#pragma once

#include <span>
#include <string>

#include "fmpestf/autodiff.hpp"
#include "fmpestf/data.hpp"
#include "fmpestf/parameter_store.hpp"

namespace fmpestf {

struct EmbeddingConfig {
  std::size_t input_channels = 1;  // D
  std::size_t d1 = 32;             // expanded raw-feature channels
  std::size_t d2 = 32;             // periodic embedding width
  std::size_t slots_per_day = 288;

  std::size_t channels() const { return d1 + d2; }
};

// H = concat(Linear(x_raw), E_week[dow] + E_day[slot]) along the channel axis.
// The periodic part is one vector per time step, shared by every node.
class DataEmbedding {
 public:
  DataEmbedding(ParameterStore& store, const std::string& prefix, const EmbeddingConfig& config,
                Initializer& init);

  // x_raw [D, N, T] -> H [d1 + d2, N, T].
  Var forward(Var x_raw, std::span<const TimeIndex> time_index) const;

  const EmbeddingConfig& config() const { return config_; }
  Parameter& expand_weight() const { return *expand_weight_; }
  Parameter& expand_bias() const { return *expand_bias_; }
  Parameter& day_table() const { return *day_table_; }
  Parameter& week_table() const { return *week_table_; }

 private:
  EmbeddingConfig config_;
  Parameter* expand_weight_;
  Parameter* expand_bias_;
  Parameter* day_table_;   // [slots_per_day, d2]
  Parameter* week_table_;  // [7, d2]
};

}  // namespace fmpestf
