// Mini-batch SGD with momentum, L2 weight decay and plateau learning-rate
// decay, plus evaluation and the epoch loop.
//
// The loop is generic over a parameter type P that provides, via ADL:
//   tensors(P&) -> std::vector<TensorRef>
//   zeros_like(const P&) -> P
//   score(const P&, const FrameFeatureSequence&) -> ClassScores
//   accumulate_gradients(const P&, seq, label, const ForwardOptions&, Rng&, P& grads) -> loss
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "din/dataset.hpp"
#include "din/model.hpp"

namespace din {

struct TrainConfig {
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double initial_lr = 5e-4;
  double lr_decay_factor = 0.1;
  std::size_t plateau_patience = 5;
  std::size_t max_epochs = 50;
  double dropout_keep = 0.5;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& c) {
  if (c.batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0))
    throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
  if (!(c.lr_decay_factor > 0.0 && c.lr_decay_factor < 1.0))
    throw std::invalid_argument("TrainConfig: lr_decay_factor must be in (0, 1)");
  if (!(c.dropout_keep > 0.0 && c.dropout_keep <= 1.0))
    throw std::invalid_argument("TrainConfig: dropout_keep must be in (0, 1]");
  if (!(c.initial_lr >= 0.0) || !(c.weight_decay >= 0.0))
    throw std::invalid_argument("TrainConfig: learning rate and weight decay must be non-negative");
}

template <class P>
struct OptimizerState {
  P velocity;
  double current_lr = 0.0;
  double best_val_error = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;
};

template <class P>
OptimizerState<P> make_optimizer_state(const P& params, const TrainConfig& config) {
  return {zeros_like(params), config.initial_lr, std::numeric_limits<double>::infinity(), 0};
}

/// v <- momentum*v + (g + wd*p); p <- p - lr*v. Pass wd = 0 for biases.
inline void momentum_update(std::span<double> param, std::span<const double> grad,
                            std::span<double> velocity, double lr, double momentum, double wd) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grad[i] + wd * param[i]);
    param[i] -= lr * velocity[i];
  }
}

template <class P>
void sgd_momentum_step(P& params, P& grads, OptimizerState<P>& state, const TrainConfig& config) {
  auto p = tensors(params);
  auto g = tensors(grads);
  auto v = tensors(state.velocity);
  if (p.size() != g.size() || p.size() != v.size())
    throw std::invalid_argument("sgd_momentum_step: tensor count mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i].values.size() != p[i].values.size() || v[i].values.size() != p[i].values.size())
      throw std::invalid_argument("sgd_momentum_step: shape mismatch for " + p[i].name);
    momentum_update(p[i].values, g[i].values, v[i].values, state.current_lr, config.momentum,
                    p[i].decays ? config.weight_decay : 0.0);
  }
}

/// Strict improvement resets the counter; `patience` misses in a row decay the rate.
template <class P>
void plateau_update(OptimizerState<P>& state, double val_error, const TrainConfig& config) {
  if (val_error < state.best_val_error - 1e-12) {
    state.best_val_error = val_error;
    state.epochs_since_improvement = 0;
    return;
  }
  if (++state.epochs_since_improvement >= config.plateau_patience) {
    state.current_lr *= config.lr_decay_factor;
    state.epochs_since_improvement = 0;
  }
}

template <class P>
void scale_tensors(P& params, double factor) {
  for (auto& t : tensors(params))
    for (double& x : t.values) x *= factor;
}

template <class P>
bool params_finite(P& params) {
  for (const auto& t : tensors(params))
    if (!all_finite(std::span<const double>(t.values))) return false;
  return true;
}

/// Batch sizes for `count` samples, the last batch possibly short.
inline std::vector<std::size_t> batch_sizes(std::size_t count, std::size_t batch_size) {
  std::vector<std::size_t> out;
  for (std::size_t start = 0; start < count; start += batch_size)
    out.push_back(std::min(batch_size, count - start));
  return out;
}

/// Mean cross-entropy gradient of `batch` at `params`, plus the summed loss.
template <class P>
P batch_gradient(const P& params, std::span<const Sample* const> batch, const ForwardOptions& options,
                 Rng& rng, double& loss_sum) {
  P grads = zeros_like(params);
  for (const Sample* s : batch)
    loss_sum += accumulate_gradients(params, s->sequence, s->label, options, rng, grads);
  scale_tensors(grads, 1.0 / static_cast<double>(batch.size()));
  return grads;
}

/// One pass over `split` in an order shuffled by `rng`; returns the mean loss.
template <class P>
double train_epoch(P& params, OptimizerState<P>& state, std::span<const Sample> split,
                   const TrainConfig& config, Rng& rng) {
  if (split.empty()) throw std::invalid_argument("train_epoch: empty split");
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  const ForwardOptions options{SamplingMode::train_random, config.dropout_keep, nullptr};
  double loss_sum = 0.0;
  std::vector<const Sample*> batch;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    batch.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
      batch.push_back(&split[order[i]]);
    P grads = batch_gradient(params, std::span<const Sample* const>(batch), options, rng, loss_sum);
    sgd_momentum_step(params, grads, state, config);
  }
  return loss_sum / static_cast<double>(split.size());
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Evaluation mode: center sampling, no dropout.
template <class P>
EvalResult evaluate(const P& params, std::span<const Sample> split) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& s : split) {
    const ClassScores scores = score(params, s.sequence);
    loss += cross_entropy_from_logits(scores.fused_logits, s.label).loss;
    if (predict(scores) == s.label) ++correct;
  }
  const double count = static_cast<double>(split.size());
  return {loss / count, static_cast<double>(correct) / count};
}

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double current_lr = 0.0;  // rate used during this epoch

  bool operator==(const EpochReport&) const = default;
};

/// Resumable training state: everything needed to continue bit-exactly.
template <class P>
struct TrainingState {
  P params;
  OptimizerState<P> optimizer;
  std::size_t epochs_completed = 0;
  P best_params;
  double best_val_accuracy = -1.0;
  std::size_t best_epoch = 0;
};

template <class P>
TrainingState<P> make_training_state(P params, const TrainConfig& config) {
  TrainingState<P> s;
  s.optimizer = make_optimizer_state(params, config);
  s.best_params = params;
  s.params = std::move(params);
  return s;
}

/// Trains until `config.max_epochs` epochs are completed in total. Epoch e
/// draws from the stream Rng::derive(seed, e), so a resumed run replays the
/// same randomness as an uninterrupted one. The best model is selected by
/// validation accuracy, ties to the earlier epoch.
template <class P>
std::vector<EpochReport> fit(TrainingState<P>& state, std::span<const Sample> train,
                             std::span<const Sample> val, const TrainConfig& config,
                             const std::function<void(const EpochReport&)>& on_epoch = {}) {
  validate(config);
  std::vector<EpochReport> history;
  while (state.epochs_completed < config.max_epochs) {
    const std::size_t epoch = state.epochs_completed;
    Rng rng(Rng::derive(config.seed, epoch));
    EpochReport report;
    report.epoch = epoch + 1;
    report.current_lr = state.optimizer.current_lr;
    report.train_loss = train_epoch(state.params, state.optimizer, train, config, rng);
    if (!params_finite(state.params) || !params_finite(state.optimizer.velocity))
      throw std::runtime_error("fit: non-finite parameters after epoch " + std::to_string(epoch + 1));
    const EvalResult ev = evaluate(state.params, val);
    report.val_loss = ev.loss;
    report.val_accuracy = ev.accuracy;
    plateau_update(state.optimizer, 1.0 - ev.accuracy, config);
    ++state.epochs_completed;
    if (ev.accuracy > state.best_val_accuracy) {
      state.best_val_accuracy = ev.accuracy;
      state.best_epoch = report.epoch;
      state.best_params = state.params;
    }
    history.push_back(report);
    if (on_epoch) on_epoch(report);
  }
  return history;
}

}  // namespace din
