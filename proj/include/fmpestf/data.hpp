#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fmpestf/tensor.hpp"

namespace fmpestf {

struct TimeIndex {
  std::size_t slot = 0;         // time-of-day slot in [0, slots_per_day)
  std::size_t day_of_week = 0;  // [0, 7)

  friend bool operator==(const TimeIndex&, const TimeIndex&) = default;
};

// Node set plus N x N nonnegative adjacency with a zero diagonal.
struct TrafficGraph {
  std::size_t n_nodes = 0;
  Tensor adjacency;
  std::vector<std::string> node_ids;
};

// Raw multichannel series [D, N, T_total] with the calendar position of step 0.
struct Series {
  Tensor values;
  int interval_min = 5;
  std::size_t slots_per_day = 288;
  std::size_t start_slot = 0;
  std::size_t start_day_of_week = 0;

  std::size_t channels() const { return values.dim(0); }
  std::size_t nodes() const { return values.dim(1); }
  std::size_t length() const { return values.dim(2); }
  TimeIndex time_at(std::size_t step) const;
};

// 5 min -> 288, 30 min -> 48. Interval must divide a day.
std::size_t slots_per_day_for(int interval_min);

// Series text format: header `#interval_min=<k> channels=<D>` (optional
// `start_slot=` / `start_dow=`), then one row per step with D*N columns in
// channel-major blocks. Separators: comma, tab or spaces.
Series parse_series(std::istream& in, std::optional<std::size_t> expected_nodes = std::nullopt);
Series load_series(const std::filesystem::path& path,
                   std::optional<std::size_t> expected_nodes = std::nullopt);
void write_series(const std::filesystem::path& path, const Series& series);

// Dense N x N rows or `src dst weight` edge lines (`#format=edges|dense`
// forces the choice). Undirected graphs are symmetrized with max(A, A^T); the
// diagonal is zeroed.
TrafficGraph parse_adjacency(std::istream& in, std::optional<std::size_t> n_nodes = std::nullopt,
                             bool undirected = true);
TrafficGraph load_adjacency(const std::filesystem::path& path,
                            std::optional<std::size_t> n_nodes = std::nullopt,
                            bool undirected = true);
void write_adjacency(const std::filesystem::path& path, const TrafficGraph& graph);

struct SynthOptions {
  std::size_t n_nodes = 8;
  std::size_t days = 14;
  int interval_min = 5;
  std::uint64_t seed = 0;
  // Scales every stochastic component (innovations and day-level jitter).
  double noise = 1.0;
  // Scales neighbour spillover of deviations; 0 disables graph coupling.
  double coupling = 1.0;
  double weekly_amplitude = 0.15;
  // Coupling graph; generated from the seed when absent.
  std::optional<TrafficGraph> graph;
};

struct SyntheticDataset {
  Series series;
  TrafficGraph graph;
};

// Daily sinusoid with node-specific phase, weekly modulation, day-level
// amplitude jitter, and an AR(1) deviation process that spills over to graph
// neighbours. Deterministic for a given seed.
SyntheticDataset synth_series(const SynthOptions& options);

struct SampleWindow {
  Tensor history;  // [D, N, T]
  Tensor target;   // [N, T'] from channel 0, raw units
  std::vector<TimeIndex> time_index;
  std::size_t start = 0;  // series step of history[..., 0]

  // Series step of the last history value.
  std::size_t origin() const { return start + time_index.size() - 1; }
};

std::vector<SampleWindow> make_windows(const Series& series, std::size_t history,
                                       std::size_t horizon, std::size_t stride = 1);

// Per-channel z-score statistics.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  void normalize(Tensor& history) const;
  void denormalize(Tensor& history) const;
  double denormalize_value(std::size_t channel, double v) const { return v * stddev[channel] + mean[channel]; }
};

struct DatasetSplit {
  std::vector<SampleWindow> train;
  std::vector<SampleWindow> val;
  std::vector<SampleWindow> test;
  Normalizer normalizer;
  std::vector<std::string> warnings;
};

// Chronological partition: train = floor(r0 n), val = floor(r1 n), test gets
// the rest. Normalizer is fit on train histories only; all histories are
// z-scored, targets stay raw.
DatasetSplit split_chronological(std::vector<SampleWindow> windows,
                                 std::array<double, 3> ratios = {0.6, 0.2, 0.2});

Normalizer fit_normalizer(const std::vector<SampleWindow>& windows, std::vector<std::string>* warnings);

}  // namespace fmpestf
