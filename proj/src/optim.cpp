#include "fcn/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

#include "fcn/rng.hpp"

namespace fcn {

Tensor& VelocityStore::get(const std::string& name, const Shape4& dims) {
  auto it = v.find(name);
  if (it == v.end()) it = v.emplace(name, Tensor(dims)).first;
  if (!(it->second.dims == dims))
    throw ShapeError("velocity dims mismatch for '" + name + "'");
  return it->second;
}

void sgd_momentum_step(Tensor& value, const Tensor& grad, Tensor& velocity,
                       double lr, double momentum, double weight_decay) {
  if (!(value.dims == grad.dims) || !(value.dims == velocity.dims))
    throw ShapeError("sgd step: value/grad/velocity dims mismatch");
  for (std::size_t i = 0; i < value.data.size(); ++i) {
    const double g = grad.data[i] + weight_decay * value.data[i];
    velocity.data[i] = -lr * g + momentum * velocity.data[i];
    value.data[i] += velocity.data[i];
  }
}

void sgd_momentum_step(Graph& g, VelocityStore& vel, const OptimConfig& cfg,
                       double lr_multiplier) {
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
    throw InvalidParamError("sgd: momentum must be in [0, 1)");
  if (!(cfg.learning_rate > 0.0))
    throw InvalidParamError("sgd: learning rate must be positive");
  for (const std::string& name : g.param_names()) {
    Param& p = g.param(name);
    if (!p.learnable) continue;
    const double lr = cfg.learning_rate * lr_multiplier *
                      (p.is_bias ? cfg.bias_lr_multiplier : 1.0);
    sgd_momentum_step(p.value, p.grad, vel.get(name, p.value.dims), lr,
                      cfg.momentum, cfg.weight_decay);
  }
}

double equivalent_momentum(double p, std::int64_t k, std::int64_t k_prime) {
  if (!(p > 0.0) || !(p < 1.0))
    throw InvalidParamError("equivalent_momentum: p must be in (0, 1)");
  if (k < 1 || k_prime < 1)
    throw InvalidParamError("equivalent_momentum: batch sizes must be >= 1");
  return std::pow(p, static_cast<double>(k_prime) / static_cast<double>(k));
}

std::vector<double> effective_coefficients(double p, std::int64_t k,
                                           std::int64_t horizon) {
  if (horizon < 1)
    throw InvalidParamError("effective_coefficients: horizon >= 1");
  if (k < 1) throw InvalidParamError("effective_coefficients: k >= 1");
  std::vector<double> c(static_cast<std::size_t>(horizon));
  double cur = 1.0;
  for (std::int64_t j = 0; j < horizon; ++j) {
    if (j > 0 && j % k == 0) cur *= p;  // same multiply chain as the optimizer
    c[static_cast<std::size_t>(j)] = cur;
  }
  return c;
}

OptimConfig regime_config(Regime r, double base_lr) {
  OptimConfig cfg;
  switch (r) {
    case Regime::kAccum:
      cfg.batch_size = 20;
      cfg.momentum = 0.9;
      cfg.accumulate = true;
      cfg.learning_rate = base_lr * 10.0;
      break;
    case Regime::kOnline:
      cfg.batch_size = 1;
      cfg.momentum = 0.9;
      cfg.learning_rate = base_lr * 10.0;
      break;
    case Regime::kHeavy:
      cfg.batch_size = 1;
      cfg.momentum = 0.99;
      cfg.learning_rate = base_lr;
      break;
  }
  return cfg;
}

std::string log_header() {
  return "# update loss pixel_acc mean_acc mean_iu fw_iu seconds";
}

std::string format_log_record(const LogRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%8lld %14.6f %9.4f %9.4f %9.4f %9.4f %9.2f",
                static_cast<long long>(r.update), r.loss, r.metrics.pixel_acc,
                r.metrics.mean_acc, r.metrics.mean_iu, r.metrics.fw_iu,
                r.seconds);
  return buf;
}

namespace {

Tensor centered_input(const SegSample& s, MaskMode mask, double mean) {
  const SegSample masked = mask == MaskMode::kNone ? s : apply_mask(s, mask);
  Tensor x = masked.image;
  for (double& v : x.data) v -= mean;
  return x;
}

LossResult run_loss(const Tensor& scores, const LabelMap& labels,
                    const LossConfig& cfg, std::int64_t first_class,
                    const Tensor* mask) {
  if (cfg.kind == LossConfig::kSigmoidCe)
    return sigmoid_ce_loss(scores, labels, cfg, first_class, mask);
  return softmax_loss(scores, labels, cfg, mask);
}

LabelMap predict(const Tensor& scores, std::int64_t first_class) {
  if (first_class == 1) return null_background_infer(scores);
  return channel_argmax(scores);
}

struct EvalShard {
  ConfusionMatrix cm;
  double loss = 0.0;
};

}  // namespace

EvalResult evaluate_dataset(Graph& g, const Dataset& data,
                            const LossConfig& loss_cfg, MaskMode mask,
                            std::int64_t n_classes, std::int64_t first_class,
                            bool exclude_background, int threads) {
  if (data.samples.empty())
    throw InvalidParamError("evaluate: empty dataset");
  const std::int64_t count = static_cast<std::int64_t>(data.samples.size());
  threads = std::max(1, std::min<int>(threads, static_cast<int>(count)));

  std::vector<EvalShard> shards(static_cast<std::size_t>(count),
                                EvalShard{ConfusionMatrix(n_classes), 0.0});
  auto run_range = [&](Graph graph, std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const SegSample& s = data.samples[static_cast<std::size_t>(i)];
      const Tensor scores =
          graph.forward(centered_input(s, mask, data.mean));
      const LossResult lr = run_loss(scores, s.labels, loss_cfg, first_class,
                                     nullptr);
      EvalShard& sh = shards[static_cast<std::size_t>(i)];
      sh.loss = lr.loss;
      sh.cm.accumulate(predict(scores, first_class), s.labels);
    }
  };

  if (threads == 1) {
    run_range(g, 0, count);
  } else {
    std::vector<std::thread> pool;
    const std::int64_t chunk = (count + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::int64_t lo = t * chunk;
      const std::int64_t hi = std::min<std::int64_t>(count, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run_range, g, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  // merge in image order for determinism regardless of thread count
  EvalResult r;
  ConfusionMatrix total(n_classes);
  for (const EvalShard& sh : shards) {
    total += sh.cm;
    r.loss += sh.loss;
  }
  r.metrics = compute_metrics(total, exclude_background);
  return r;
}

TrainLog train(Graph& g, const Dataset& train_set, const Dataset& val_set,
               const LossConfig& loss_cfg, const OptimConfig& optim_cfg,
               const TrainOptions& opts) {
  if (train_set.samples.empty())
    throw InvalidParamError("train: empty training set");
  if (optim_cfg.batch_size < 1)
    throw InvalidParamError("train: batch size must be >= 1");
  const double keep_p = loss_cfg.sample_keep_p;
  if (!(keep_p > 0.0) || keep_p > 1.0)
    throw InvalidParamError("train: sample_keep_p must be in (0, 1]");
  if (opts.n_classes < 2)
    throw InvalidParamError("train: n_classes must be set");

  const auto t0 = std::chrono::steady_clock::now();
  VelocityStore vel;
  TrainLog log;

  // 1/p batch scaling keeps the expected number of loss terms per update
  const std::int64_t images_per_update = static_cast<std::int64_t>(
      std::llround(static_cast<double>(optim_cfg.batch_size) / keep_p));

  const std::int64_t n_train = static_cast<std::int64_t>(
      train_set.samples.size());
  Rng order_rng(derive_seed(opts.seed, kSeedOrder));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n_train));
  for (std::int64_t i = 0; i < n_train; ++i)
    order[static_cast<std::size_t>(i)] = i;
  std::int64_t cursor = 0;
  auto next_index = [&]() {
    if (cursor == n_train) cursor = 0;
    if (cursor == 0 && !opts.fixed_order) {
      // Fisher-Yates reshuffle per epoch
      for (std::int64_t i = n_train - 1; i > 0; --i) {
        const std::int64_t j = order_rng.uniform_int(0, i);
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(j)]);
      }
    }
    return order[static_cast<std::size_t>(cursor++)];
  };

  double lr_mult = 1.0;
  std::size_t schedule_pos = 0;
  std::uint64_t draw = 0;  // counter for mask/augment sub-seeds

  auto snapshot = [&](std::int64_t update, double loss) {
    EvalResult ev = evaluate_dataset(g, val_set, loss_cfg, opts.eval_mask,
                                     opts.n_classes, opts.first_class,
                                     opts.exclude_background_metric);
    LogRecord rec;
    rec.update = update;
    rec.loss = loss;
    rec.metrics = ev.metrics;
    rec.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0).count();
    log.records.push_back(rec);
    if (ev.metrics.mean_iu > log.best_mean_iu) {
      log.best_mean_iu = ev.metrics.mean_iu;
      log.best_update = update;
      log.best_params.clear();
      for (const std::string& name : g.param_names())
        log.best_params.emplace(name, g.param(name).value);
    }
  };

  for (std::int64_t update = 1; update <= opts.updates; ++update) {
    while (schedule_pos < optim_cfg.lr_schedule.size() &&
           optim_cfg.lr_schedule[schedule_pos].first <= update) {
      lr_mult *= optim_cfg.lr_schedule[schedule_pos].second;
      ++schedule_pos;
    }

    g.zero_grads();
    double batch_loss = 0.0;
    for (std::int64_t b = 0; b < images_per_update; ++b) {
      SegSample s = train_set.samples[static_cast<std::size_t>(next_index())];
      if (opts.augment) {
        const std::uint64_t aseed = derive_seed(opts.seed, kSeedAugment, draw);
        Rng arng(aseed);
        s = augment(s, arng.bernoulli(0.5), opts.jitter, aseed);
      }
      const Tensor x = centered_input(s, opts.train_mask, train_set.mean);
      const Tensor scores = g.forward(
          x, {.train = true, .seed = derive_seed(opts.seed, kSeedDropout, draw)});
      Tensor mask;
      const Tensor* mask_ptr = nullptr;
      if (keep_p < 1.0) {
        mask = sample_loss_mask(scores.dims.n, scores.dims.h, scores.dims.w,
                                keep_p,
                                derive_seed(opts.seed, kSeedLossMask, draw));
        mask_ptr = &mask;
      }
      const LossResult lr =
          run_loss(scores, s.labels, loss_cfg, opts.first_class, mask_ptr);
      if (!std::isfinite(lr.loss))
        throw DivergenceError("training diverged: non-finite loss at update " +
                              std::to_string(update));
      batch_loss += lr.loss;
      g.backward(lr.grad);  // grads accumulate across the batch
      ++draw;
    }
    sgd_momentum_step(g, vel, optim_cfg, lr_mult);
    log.final_loss = batch_loss;

    if (opts.eval_every > 0 && update % opts.eval_every == 0)
      snapshot(update, batch_loss);
  }
  if (log.records.empty() || log.records.back().update != opts.updates)
    snapshot(opts.updates, log.final_loss);
  return log;
}

void load_params(Graph& g, const std::map<std::string, Tensor>& snapshot) {
  for (const auto& [name, value] : snapshot) {
    Param& p = g.param(name);
    if (!(p.value.dims == value.dims))
      throw ShapeError("snapshot param '" + name + "' dims mismatch");
    p.value = value;
  }
}

}  // namespace fcn
