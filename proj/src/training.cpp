#include "fmpestf/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "fmpestf/errors.hpp"

namespace fmpestf {
namespace {

// Runs fn(i) for i in [0, n) over contiguous chunks; rethrows the first error
// by index order.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::size_t unmasked(const Tensor& y, double threshold) {
  std::size_t n = 0;
  for (double v : y.values()) {
    if (std::abs(v) > threshold) ++n;
  }
  return n;
}

}  // namespace

Adam::Adam(std::vector<Parameter*> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value().shape(), 0.0);
    v_.emplace_back(p->value().shape(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& value = params_[k]->value();
    const Tensor& grad = params_[k]->grad();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      value[i] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
  }
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad().values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->grad().values()) g *= factor;
    }
  }
  return norm;
}

std::string format_epoch_line(const EpochLog& log) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch=%zu train_loss=%.17g val_mae=%.17g best=%s", log.epoch, log.train_loss,
                log.val_mae, log.best ? "true" : "false");
  return buf;
}

std::vector<Tensor> predict_all(const FmpestfModel& model, const std::vector<SampleWindow>& windows,
                                const Tensor& prompt, std::size_t threads) {
  std::vector<Tensor> out(windows.size());
  parallel_for(windows.size(), threads, [&](std::size_t i) { out[i] = model.predict(windows[i], prompt); });
  return out;
}

MetricReport evaluate(const FmpestfModel& model, const std::vector<SampleWindow>& windows, const Tensor& prompt,
                      double threshold, std::size_t threads) {
  if (windows.empty()) throw ContractError("cannot evaluate an empty split");
  std::vector<Tensor> targets;
  targets.reserve(windows.size());
  for (const auto& w : windows) targets.push_back(w.target);
  return compute_metrics(predict_all(model, windows, prompt, threads), targets, threshold);
}

TrainResult train(FmpestfModel& model, const DatasetSplit& split, const Tensor& prompt, const TrainConfig& config,
                  std::ostream* log_out) {
  config.validate();
  if (split.train.empty()) throw ContractError("training split is empty");
  model.set_normalizer(split.normalizer);

  ParameterStore& store = model.parameters();
  const std::vector<Parameter*> params = store.all();
  Adam optimizer(params, AdamOptions{config.learning_rate});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::vector<Tensor> best_params = store.snapshot();
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_abs = 0.0;
    std::size_t epoch_count = 0;

    for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t size = end - start;
      std::size_t count = 0;
      for (std::size_t i = start; i < end; ++i) count += unmasked(split.train[order[i]].target, config.mask_threshold);
      const double divisor = count == 0 ? 1.0 : static_cast<double>(count);

      std::vector<double> losses(size, 0.0);
      std::vector<std::vector<std::pair<Parameter*, Tensor>>> grads(size);
      try {
        parallel_for(size, config.threads, [&](std::size_t s) {
          const SampleWindow& w = split.train[order[start + s]];
          Tape tape;
          Var y_hat = model.forward(tape, w, prompt);
          Var loss = ops::masked_abs_error_sum(y_hat, w.target, config.mask_threshold, divisor);
          tape.backward(loss);
          losses[s] = loss.value()[0];
          grads[s] = tape.parameter_grads();
        });
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + ": " +
                             e.what());
      }

      store.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t s = 0; s < size; ++s) {
        batch_loss += losses[s];
        for (auto& [p, g] : grads[s]) p->grad() += g;
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) +
                             ": non-finite training loss");
      }
      if (config.clip_norm > 0.0) clip_grad_norm(params, config.clip_norm);
      optimizer.step();
      epoch_abs += batch_loss * divisor;
      epoch_count += count;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_count == 0 ? 0.0 : epoch_abs / static_cast<double>(epoch_count);
    entry.val_mae = evaluate(model, split.val, prompt, config.mask_threshold, config.threads).mae;
    entry.best = epoch == 0 || entry.val_mae < result.best_val_mae;
    if (entry.best) {
      result.best_epoch = epoch;
      result.best_val_mae = entry.val_mae;
      best_params = store.snapshot();
      stale = 0;
    } else {
      ++stale;
    }
    result.log.push_back(entry);
    if (log_out) *log_out << format_epoch_line(entry) << '\n' << std::flush;
    if (stale >= config.patience) break;
  }
  store.restore(best_params);
  store.zero_grad();
  return result;
}

}  // namespace fmpestf
