#include "fmpestf/embedding.hpp"

#include "fmpestf/errors.hpp"

namespace fmpestf {

namespace {
constexpr double kTableInitBound = 0.04;
}

DataEmbedding::DataEmbedding(ParameterStore& store, const std::string& prefix,
                             const EmbeddingConfig& config, Initializer& init)
    : config_(config) {
  if (config.input_channels == 0 || config.d1 == 0 || config.d2 == 0 || config.slots_per_day == 0) {
    throw ConfigError("embedding widths and slots_per_day must be positive");
  }
  expand_weight_ = &store.add(prefix + ".expand.weight",
                              init.fan_in({config.d1, config.input_channels}, config.input_channels));
  expand_bias_ = &store.add(prefix + ".expand.bias", init.fan_in({config.d1}, config.input_channels));
  day_table_ = &store.add(prefix + ".time_of_day", init.uniform({config.slots_per_day, config.d2}, kTableInitBound));
  week_table_ = &store.add(prefix + ".day_of_week", init.uniform({7, config.d2}, kTableInitBound));
}

Var DataEmbedding::forward(Var x_raw, std::span<const TimeIndex> time_index) const {
  const Shape& shape = x_raw.shape();
  if (shape.size() != 3 || shape[0] != config_.input_channels) {
    throw DimensionError("embedding expects [" + std::to_string(config_.input_channels) +
                         ", N, T], got " + shape_string(shape));
  }
  if (time_index.size() != shape[2]) {
    throw DimensionError("embedding: " + std::to_string(time_index.size()) + " time indices for " +
                         std::to_string(shape[2]) + " steps");
  }
  Tape& tape = *x_raw.tape();
  std::vector<std::size_t> slots, days;
  slots.reserve(time_index.size());
  days.reserve(time_index.size());
  for (const TimeIndex& ti : time_index) {
    if (ti.slot >= config_.slots_per_day) {
      throw IndexError("time-of-day slot " + std::to_string(ti.slot) + " outside [0, " +
                       std::to_string(config_.slots_per_day) + ")");
    }
    if (ti.day_of_week >= 7) {
      throw IndexError("day-of-week " + std::to_string(ti.day_of_week) + " outside [0, 7)");
    }
    slots.push_back(ti.slot);
    days.push_back(ti.day_of_week);
  }

  Var expanded = ops::linear(x_raw, tape.parameter(*expand_weight_), tape.parameter(*expand_bias_), 0);
  Var periodic = ops::add(ops::gather_rows(tape.parameter(*week_table_), days),
                          ops::gather_rows(tape.parameter(*day_table_), slots));
  return ops::concat({expanded, ops::expand_nodes(periodic, shape[1])}, 0);
}

}  // namespace fmpestf
