#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fcn/data.hpp"
#include "fcn/graph.hpp"
#include "fcn/losses.hpp"
#include "fcn/metrics.hpp"

namespace fcn {

/// Minibatch SGD with momentum: g_t = -eta sum_i grad(x_{kt+i}) + p g_{t-1}.
struct OptimConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;            // p < 1
  std::int64_t batch_size = 1;      // k images per update
  bool accumulate = false;          // informational: k > 1 accumulates
  double weight_decay = 5e-4;       // additive eta*lambda*theta in the step
  double bias_lr_multiplier = 2.0;  // doubled learning rate for biases
  std::vector<std::pair<std::int64_t, double>> lr_schedule;  // (update, mult)
};

/// Per-parameter velocity tensors g_{t-1}, zero-initialized.
struct VelocityStore {
  std::map<std::string, Tensor> v;
  Tensor& get(const std::string& name, const Shape4& dims);
};

/// velocity <- -eta (grad + lambda theta) + p velocity; theta += velocity.
/// Scalar-tensor variant used by both the graph step and the unit tests.
void sgd_momentum_step(Tensor& value, const Tensor& grad, Tensor& velocity,
                       double lr, double momentum, double weight_decay);

/// Steps every learnable graph parameter; biases use lr * bias_lr_multiplier
/// and the grads are expected to hold the batch-summed gradient.
void sgd_momentum_step(Graph& g, VelocityStore& vel, const OptimConfig& cfg,
                       double lr_multiplier = 1.0);

/// p' with p^(1/k) = p'^(1/k'), i.e. p' = p^(k'/k).
double equivalent_momentum(double p, std::int64_t k, std::int64_t k_prime);

/// Coefficient of example j (most recent first) in the expanded update
/// sum: c_j = p^floor(j/k), computed by cumulative multiplication so it
/// matches the optimizer's own arithmetic exactly.
std::vector<double> effective_coefficients(double p, std::int64_t k,
                                           std::int64_t horizon);

enum class Regime { kAccum, kOnline, kHeavy };

/// (k, p) presets: accum = (20, 0.9), online = (1, 0.9), heavy = (1, 0.99).
/// The learning rate is scaled so the steady-state per-example drift
/// eta / (1 - p) matches across regimes for a given base rate.
OptimConfig regime_config(Regime r, double base_lr);

struct TrainOptions {
  std::int64_t updates = 1000;
  std::int64_t eval_every = 0;  // 0 = final evaluation only
  bool fixed_order = false;     // cycle the set in order (controlled runs)
  std::uint64_t seed = 1;
  std::int64_t n_classes = 0;   // required; label-space size incl. background
  MaskMode train_mask = MaskMode::kNone;
  MaskMode eval_mask = MaskMode::kNone;
  bool augment = false;
  std::int64_t jitter = 0;
  std::int64_t first_class = 0;  // channel-to-class shift (null background)
  bool exclude_background_metric = false;
};

struct LogRecord {
  std::int64_t update = 0;
  double loss = 0.0;
  Metrics metrics;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<LogRecord> records;
  std::int64_t best_update = 0;
  double best_mean_iu = -1.0;
  std::map<std::string, Tensor> best_params;  // checkpointed best-by-mean-IU
  double final_loss = 0.0;
};

/// Format one snapshot as the fixed-column log/table record.
std::string format_log_record(const LogRecord& r);
std::string log_header();

/// Evaluate a net over a dataset: per-image forward, argmax (or null
/// background rule when first_class is 1), confusion accumulation.
struct EvalResult {
  Metrics metrics;
  double loss = 0.0;
};
EvalResult evaluate_dataset(Graph& g, const Dataset& data,
                            const LossConfig& loss_cfg, MaskMode mask,
                            std::int64_t n_classes,
                            std::int64_t first_class = 0,
                            bool exclude_background = false,
                            int threads = 1);

/// SGD training over the dataset; supports accumulation, online and heavy
/// regimes, loss sampling with 1/p batch scaling, masking and augmentation.
/// Aborts with DivergenceError on a non-finite loss.
TrainLog train(Graph& g, const Dataset& train_set, const Dataset& val_set,
               const LossConfig& loss_cfg, const OptimConfig& optim_cfg,
               const TrainOptions& opts);

/// Restore a snapshot taken by train() into the graph.
void load_params(Graph& g, const std::map<std::string, Tensor>& snapshot);

}  // namespace fcn
