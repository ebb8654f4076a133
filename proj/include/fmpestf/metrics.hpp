#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fmpestf/autodiff.hpp"
#include "fmpestf/data.hpp"

namespace fmpestf {

// Entries with |y| <= this are always left out of MAPE.
inline constexpr double kMapeFloor = 1e-3;

struct HorizonMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent
  std::size_t count = 0;
};

struct MetricReport {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent
  std::vector<HorizonMetrics> per_horizon;
  std::size_t count = 0;          // entries scored by MAE/RMSE
  std::size_t masked_count = 0;   // entries left out by the threshold
  std::size_t mape_count = 0;
};

// Mean |y_hat - y| over entries with |y| > threshold; 0 when all are masked.
Var masked_mae_loss(Var y_hat, const Tensor& y, double threshold);
double masked_mae(const Tensor& y_hat, const Tensor& y, double threshold);

// Predictions and targets are [N, T'] each.
MetricReport compute_metrics(const std::vector<Tensor>& predictions, const std::vector<Tensor>& targets,
                             double threshold);

// Delimited table with one row per named report: model,MAE,RMSE,MAPE(%).
void write_metric_table(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& rows);
// One row per horizon step: horizon,mae,rmse,mape,count.
void write_horizon_curve(std::ostream& out, const MetricReport& report);
void write_text_file(const std::filesystem::path& path, const std::string& contents);

// Reference forecasters scored against the same windows as the model.
//
// Mean of channel 0 per node and time-of-day slot over steps [0, fit_steps);
// slots with no observations fall back to the node mean.
class HistoricalAverage {
 public:
  HistoricalAverage(const Series& series, std::size_t fit_steps);
  Tensor forecast(const SampleWindow& window, std::size_t horizon) const;

 private:
  const Series* series_;
  Tensor table_;  // [N, slots_per_day]
};

// Repeats the last observed channel-0 value over the horizon.
Tensor last_value_forecast(const Series& series, const SampleWindow& window, std::size_t horizon);

}  // namespace fmpestf
