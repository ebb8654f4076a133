#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "fmpestf/config.hpp"
#include "fmpestf/data.hpp"
#include "fmpestf/metrics.hpp"
#include "fmpestf/model.hpp"

namespace fmpestf {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over a fixed parameter list, reading Parameter::grad.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

// Scales all gradients so their joint L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  bool best = false;
};

// `epoch=<e> train_loss=<x> val_mae=<x> best=<bool>`
std::string format_epoch_line(const EpochLog& log);

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
};

// Forecasts for each window, in raw units.
std::vector<Tensor> predict_all(const FmpestfModel& model, const std::vector<SampleWindow>& windows,
                                const Tensor& prompt, std::size_t threads = 1);

// Metrics over every window of a split. Throws ContractError when empty.
MetricReport evaluate(const FmpestfModel& model, const std::vector<SampleWindow>& windows, const Tensor& prompt,
                      double threshold, std::size_t threads = 1);

// Masked-MAE training with Adam and early stopping on validation MAE. The
// model takes the split's normalizer and ends with its best parameters.
// Per-sample gradients are summed in sample order, so results do not depend
// on the thread count.
TrainResult train(FmpestfModel& model, const DatasetSplit& split, const Tensor& prompt, const TrainConfig& config,
                  std::ostream* log_out = nullptr);

}  // namespace fmpestf
