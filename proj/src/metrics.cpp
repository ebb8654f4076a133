#include "fmpestf/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "fmpestf/errors.hpp"

namespace fmpestf {
namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace

Var masked_mae_loss(Var y_hat, const Tensor& y, double threshold) {
  require_same_shape(y_hat.value(), y, "masked_mae_loss");
  std::size_t count = 0;
  for (double v : y.values()) {
    if (std::abs(v) > threshold) ++count;
  }
  // All-masked targets contribute nothing; the divisor only has to be nonzero.
  return ops::masked_abs_error_sum(y_hat, y, threshold, count == 0 ? 1.0 : static_cast<double>(count));
}

double masked_mae(const Tensor& y_hat, const Tensor& y, double threshold) {
  require_same_shape(y_hat, y, "masked_mae");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (std::abs(y[i]) <= threshold) continue;
    total += std::abs(y_hat[i] - y[i]);
    ++count;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

MetricReport compute_metrics(const std::vector<Tensor>& predictions, const std::vector<Tensor>& targets,
                             double threshold) {
  if (predictions.size() != targets.size()) {
    throw DimensionError("compute_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
  }
  MetricReport report;
  if (predictions.empty()) return report;
  const std::size_t horizon = targets.front().rank() == 2 ? targets.front().dim(1) : 0;
  if (horizon == 0) throw DimensionError("compute_metrics expects [N, T'] targets");

  struct Acc {
    double abs = 0, sq = 0, pct = 0;
    std::size_t n = 0, n_pct = 0;
  };
  std::vector<Acc> per(horizon);
  const double mape_threshold = std::max(threshold, kMapeFloor);
  for (std::size_t w = 0; w < targets.size(); ++w) {
    const Tensor& y = targets[w];
    const Tensor& p = predictions[w];
    require_same_shape(p, y, "compute_metrics");
    if (y.rank() != 2 || y.dim(1) != horizon) throw DimensionError("compute_metrics: ragged horizons");
    for (std::size_t i = 0; i < y.size(); ++i) {
      Acc& a = per[i % horizon];
      const double target = y[i];
      if (std::abs(target) <= threshold) {
        ++report.masked_count;
        continue;
      }
      const double err = p[i] - target;
      a.abs += std::abs(err);
      a.sq += err * err;
      ++a.n;
      if (std::abs(target) > mape_threshold) {
        a.pct += std::abs(err / target);
        ++a.n_pct;
      }
    }
  }

  Acc total;
  for (const Acc& a : per) {
    HorizonMetrics h;
    h.count = a.n;
    if (a.n > 0) {
      h.mae = a.abs / static_cast<double>(a.n);
      h.rmse = std::sqrt(a.sq / static_cast<double>(a.n));
    }
    if (a.n_pct > 0) h.mape = 100.0 * a.pct / static_cast<double>(a.n_pct);
    report.per_horizon.push_back(h);
    total.abs += a.abs;
    total.sq += a.sq;
    total.pct += a.pct;
    total.n += a.n;
    total.n_pct += a.n_pct;
  }
  report.count = total.n;
  report.mape_count = total.n_pct;
  if (total.n > 0) {
    report.mae = total.abs / static_cast<double>(total.n);
    report.rmse = std::sqrt(total.sq / static_cast<double>(total.n));
  }
  if (total.n_pct > 0) report.mape = 100.0 * total.pct / static_cast<double>(total.n_pct);
  return report;
}

void write_metric_table(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& rows) {
  out << "model,MAE,RMSE,MAPE(%)\n";
  for (const auto& [name, r] : rows) {
    out << name << ',' << format_double(r.mae) << ',' << format_double(r.rmse) << ',' << format_double(r.mape)
        << '\n';
  }
}

void write_horizon_curve(std::ostream& out, const MetricReport& report) {
  out << "horizon,mae,rmse,mape,count\n";
  for (std::size_t h = 0; h < report.per_horizon.size(); ++h) {
    const HorizonMetrics& m = report.per_horizon[h];
    out << h + 1 << ',' << format_double(m.mae) << ',' << format_double(m.rmse) << ',' << format_double(m.mape)
        << ',' << m.count << '\n';
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << contents;
  if (!out) throw IoError("failed writing " + path.string());
}

HistoricalAverage::HistoricalAverage(const Series& series, std::size_t fit_steps) : series_(&series) {
  const std::size_t n = series.nodes();
  const std::size_t spd = series.slots_per_day;
  fit_steps = std::min(fit_steps, series.length());
  if (fit_steps == 0) throw ContractError("historical average needs at least one fitting step");
  Tensor sums({n, spd}, 0.0);
  std::vector<std::size_t> counts(n * spd, 0);
  std::vector<double> node_sum(n, 0.0);
  for (std::size_t t = 0; t < fit_steps; ++t) {
    const std::size_t slot = series.time_at(t).slot;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = series.values.at({0, i, t});
      sums[i * spd + slot] += v;
      ++counts[i * spd + slot];
      node_sum[i] += v;
    }
  }
  table_ = Tensor({n, spd}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < spd; ++s) {
      const std::size_t c = counts[i * spd + s];
      table_[i * spd + s] = c > 0 ? sums[i * spd + s] / static_cast<double>(c)
                                  : node_sum[i] / static_cast<double>(fit_steps);
    }
  }
}

Tensor HistoricalAverage::forecast(const SampleWindow& window, std::size_t horizon) const {
  const std::size_t n = table_.dim(0);
  const std::size_t spd = table_.dim(1);
  Tensor out({n, horizon}, 0.0);
  for (std::size_t h = 0; h < horizon; ++h) {
    const std::size_t slot = series_->time_at(window.origin() + 1 + h).slot;
    for (std::size_t i = 0; i < n; ++i) out[i * horizon + h] = table_[i * spd + slot];
  }
  return out;
}

Tensor last_value_forecast(const Series& series, const SampleWindow& window, std::size_t horizon) {
  const std::size_t n = series.nodes();
  Tensor out({n, horizon}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double last = series.values.at({0, i, window.origin()});
    for (std::size_t h = 0; h < horizon; ++h) out[i * horizon + h] = last;
  }
  return out;
}

}  // namespace fmpestf
