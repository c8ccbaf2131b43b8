#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fcn/data.hpp"
#include "fcn/imageio.hpp"
#include "fcn/metrics.hpp"
#include "fcn/optim.hpp"
#include "fcn/rng.hpp"
#include "fcn/skipnet.hpp"

namespace fs = std::filesystem;
using namespace fcn;

namespace {

void require_file(const std::string& path) {
  if (!fs::exists(path))
    throw IoError("file not found: " + path);
}

NetDescription load_net(const std::string& path) {
  require_file(path);
  return parse_net_file(path);
}

// deterministic split: leading 7/8 train, trailing 1/8 validation
std::pair<Dataset, Dataset> split_dataset(std::vector<SegSample> samples) {
  const std::size_t n_val = std::max<std::size_t>(1, samples.size() / 8);
  std::vector<SegSample> val(samples.end() - static_cast<std::ptrdiff_t>(n_val),
                             samples.end());
  samples.resize(samples.size() - n_val);
  Dataset train = make_dataset(std::move(samples));
  Dataset vald;
  vald.samples = std::move(val);
  vald.mean = train.mean;  // validation uses the training mean
  return {std::move(train), std::move(vald)};
}

struct TrainArgs {
  std::string net_path, data_dir, val_dir, out_dir, init_ckpt;
  std::string regime = "heavy";
  std::string loss = "softmax";
  std::string mask = "none", eval_mask;
  std::int64_t classes = 5;
  std::int64_t updates = 3000;
  std::int64_t eval_every = 200;
  double lr = 3e-5;
  double weight_decay = 5e-4;
  double sample_keep = 1.0;
  double lr_mult = 1.0;
  std::uint64_t seed = 0;
  bool null_bg = false;
  bool augment = false;
  std::int64_t jitter = 0;
  bool fixed_order = false;
  bool calibrate = false;
  int threads = 1;
};

int cmd_train(const TrainArgs& a) {
  const NetDescription desc = load_net(a.net_path);
  require_file(a.data_dir + "/manifest.txt");
  fs::create_directories(a.out_dir);

  const std::int64_t score_channels = a.null_bg ? a.classes - 1 : a.classes;
  SkipNet net = build(desc, score_channels, derive_seed(a.seed, kSeedInit));

  Dataset train_set, val_set;
  if (!a.val_dir.empty()) {
    require_file(a.val_dir + "/manifest.txt");
    train_set = load_dataset(a.data_dir);
    val_set.samples = load_dataset_samples(a.val_dir);
    val_set.mean = train_set.mean;
  } else {
    auto [t, v] = split_dataset(load_dataset_samples(a.data_dir));
    train_set = std::move(t);
    val_set = std::move(v);
  }
  set_input_mean(net, train_set.mean);
  if (!a.init_ckpt.empty()) {
    require_file(a.init_ckpt);
    net.graph.load_checkpoint(a.init_ckpt, /*allow_missing=*/true);
    net.input_mean = net.graph.param("input.mean").value.data[0];
  }

  Regime regime = Regime::kHeavy;
  if (a.regime == "accum") regime = Regime::kAccum;
  else if (a.regime == "online") regime = Regime::kOnline;
  else if (a.regime != "heavy")
    throw InvalidParamError("unknown regime '" + a.regime + "'");
  OptimConfig optim = regime_config(regime, a.lr);
  optim.weight_decay = a.weight_decay;
  optim.learning_rate *= a.lr_mult * net.lr_multiplier;

  LossConfig loss_cfg;
  loss_cfg.kind = a.loss == "sigmoid" ? LossConfig::kSigmoidCe
                                      : LossConfig::kSoftmaxSum;
  if (a.loss != "sigmoid" && a.loss != "softmax")
    throw InvalidParamError("unknown loss '" + a.loss + "'");
  loss_cfg.sample_keep_p = a.sample_keep;

  TrainOptions opts;
  opts.updates = a.updates;
  opts.eval_every = a.eval_every;
  opts.seed = a.seed;
  opts.n_classes = a.classes;
  opts.train_mask = parse_mask_mode(a.mask);
  opts.eval_mask = a.eval_mask.empty() ? opts.train_mask
                                       : parse_mask_mode(a.eval_mask);
  opts.augment = a.augment;
  opts.jitter = a.jitter;
  opts.fixed_order = a.fixed_order;
  opts.first_class = a.null_bg ? 1 : 0;

  if (a.calibrate && !net.desc.skips.empty()) {
    std::vector<Tensor> calib;
    for (std::size_t i = 0; i < 8 && i < train_set.samples.size(); ++i)
      calib.push_back(train_set.samples[i].image);
    apply_stream_scales(net, calibrate_stream_scales(net, calib));
  }

  const TrainLog log = train(net.graph, train_set, val_set, loss_cfg, optim,
                             opts);

  std::ofstream lf(fs::path(a.out_dir) / "train.log");
  lf << log_header() << "\n";
  for (const LogRecord& r : log.records) lf << format_log_record(r) << "\n";

  net.graph.save_checkpoint((fs::path(a.out_dir) / "final.ckpt").string());
  if (!log.best_params.empty()) load_params(net.graph, log.best_params);
  net.graph.save_checkpoint((fs::path(a.out_dir) / "best.ckpt").string());

  // final metrics table for the best checkpoint (deterministic output:
  // the wall-clock column is fixed to zero here)
  const EvalResult ev =
      evaluate_dataset(net.graph, val_set, loss_cfg, opts.eval_mask,
                       a.classes, opts.first_class, false, a.threads);
  LogRecord rec{log.best_update, ev.loss, ev.metrics, 0.0};
  std::ofstream mf(fs::path(a.out_dir) / "metrics.txt");
  mf << log_header() << "\n" << format_log_record(rec) << "\n";
  std::cout << log_header() << "\n" << format_log_record(rec) << "\n";
  return 0;
}

int cmd_eval(const std::string& net_path, const std::string& ckpt,
             const std::string& data_dir, const std::string& mask,
             std::int64_t classes, bool null_bg, bool exclude_bg,
             bool sigmoid, int threads) {
  const NetDescription desc = load_net(net_path);
  require_file(ckpt);
  require_file(data_dir + "/manifest.txt");
  SkipNet net = build(desc, null_bg ? classes - 1 : classes, 0);
  net.graph.load_checkpoint(ckpt, /*allow_missing=*/true);
  Dataset set;
  set.samples = load_dataset_samples(data_dir);
  set.mean = net.graph.param("input.mean").value.data[0];
  LossConfig loss_cfg;
  loss_cfg.kind = sigmoid ? LossConfig::kSigmoidCe : LossConfig::kSoftmaxSum;
  const auto t0 = std::chrono::steady_clock::now();
  const EvalResult ev =
      evaluate_dataset(net.graph, set, loss_cfg, parse_mask_mode(mask),
                       classes, null_bg ? 1 : 0, exclude_bg, threads);
  LogRecord rec{0, ev.loss, ev.metrics,
                std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0).count()};
  std::cout << log_header() << "\n" << format_log_record(rec) << "\n";
  return 0;
}

int cmd_infer(const std::string& net_path, const std::string& ckpt,
              const std::string& image_path, const std::string& out_dir,
              std::int64_t classes, bool null_bg) {
  const NetDescription desc = load_net(net_path);
  require_file(ckpt);
  require_file(image_path);
  fs::create_directories(out_dir);
  SkipNet net = build(desc, null_bg ? classes - 1 : classes, 0);
  net.graph.load_checkpoint(ckpt, /*allow_missing=*/true);
  Tensor x = image_to_tensor(load_image(image_path));
  const double mean = net.graph.param("input.mean").value.data[0];
  for (double& v : x.data) v -= mean;
  const Tensor scores = net.graph.forward(x);
  const LabelMap labels = null_bg ? null_background_infer(scores)
                                  : channel_argmax(scores);
  save_image((fs::path(out_dir) / "label.png").string(),
             labels_to_image(labels));
  // per-class score maps, min-max scaled to 8 bits
  for (std::int64_t c = 0; c < scores.dims.c; ++c) {
    double lo = scores.at(0, c, 0, 0), hi = lo;
    for (std::int64_t i = 0; i < scores.dims.h; ++i)
      for (std::int64_t j = 0; j < scores.dims.w; ++j) {
        lo = std::min(lo, scores.at(0, c, i, j));
        hi = std::max(hi, scores.at(0, c, i, j));
      }
    const double span = hi > lo ? hi - lo : 1.0;
    Tensor norm({1, 1, scores.dims.h, scores.dims.w});
    for (std::int64_t i = 0; i < scores.dims.h; ++i)
      for (std::int64_t j = 0; j < scores.dims.w; ++j)
        norm.at(0, 0, i, j) = (scores.at(0, c, i, j) - lo) / span;
    char name[32];
    std::snprintf(name, sizeof name, "score_%02lld.pgm",
                  static_cast<long long>(c + (null_bg ? 1 : 0)));
    save_image((fs::path(out_dir) / name).string(), tensor_to_image(norm));
  }
  std::cout << "wrote " << out_dir << "/label.png and " << scores.dims.c
            << " score maps\n";
  return 0;
}

int cmd_bound(const std::string& data_dir, const std::string& factors,
              std::int64_t classes) {
  require_file(data_dir + "/manifest.txt");
  std::vector<LabelMap> truth;
  for (const SegSample& s : load_dataset_samples(data_dir))
    truth.push_back(s.labels);
  std::printf("# factor mean_iu\n");
  std::stringstream ss(factors);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const std::int64_t f = std::stoll(tok);
    std::printf("%6lld %9.4f\n", static_cast<long long>(f),
                iu_upper_bound(truth, f, classes));
  }
  return 0;
}

int cmd_probe(const std::string& net_path) {
  const NetDescription desc = load_net(net_path);
  std::printf("%-10s %8s %8s %8s\n", "endpoint", "rf", "stride", "offset");
  for (const ProbeRow& r : probe_description(desc))
    std::printf("%-10s %8s %8s %8s\n", r.name.c_str(), r.rf_size.str().c_str(),
                r.eff_stride.str().c_str(), r.offset.str().c_str());
  return 0;
}

int cmd_equiv(double p, std::int64_t k, std::int64_t k_prime,
              std::int64_t horizon) {
  const double p_prime = equivalent_momentum(p, k, k_prime);
  std::printf("p' = %.4f  (momentum %g at batch size %lld ~ batch size %lld)\n",
              p_prime, p, static_cast<long long>(k),
              static_cast<long long>(k_prime));
  const auto a = effective_coefficients(p, k, horizon);
  const auto b = effective_coefficients(p_prime, k_prime, horizon);
  std::printf("# j  coeff(p,k)  coeff(p',k')\n");
  for (std::int64_t j = 0; j < horizon; ++j)
    std::printf("%4lld %11.6f %11.6f\n", static_cast<long long>(j),
                a[static_cast<std::size_t>(j)], b[static_cast<std::size_t>(j)]);
  return 0;
}

int cmd_gen(const std::string& out_dir, std::int64_t count,
            const ShapesConfig& cfg) {
  fs::create_directories(out_dir);
  save_dataset(out_dir, generate(cfg, count));
  std::cout << "wrote " << count << " samples to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fully convolutional segmentation nets, desk scale"};
  app.require_subcommand(1);
  app.set_config("--config");

  // train
  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a net on a dataset");
  train_cmd->add_option("--net", ta.net_path, "net description file")
      ->required();
  train_cmd->add_option("--data", ta.data_dir, "dataset directory")
      ->required();
  train_cmd->add_option("--val-data", ta.val_dir,
                        "validation dataset directory");
  train_cmd->add_option("--out", ta.out_dir, "output directory")->required();
  train_cmd->add_option("--seed", ta.seed, "root RNG seed")->required();
  train_cmd->add_option("--regime", ta.regime, "accum | online | heavy");
  train_cmd->add_option("--classes", ta.classes, "label classes");
  train_cmd->add_option("--updates", ta.updates, "parameter updates");
  train_cmd->add_option("--eval-every", ta.eval_every, "snapshot cadence");
  train_cmd->add_option("--lr", ta.lr, "base learning rate (heavy regime)");
  train_cmd->add_option("--weight-decay", ta.weight_decay, "weight decay");
  train_cmd->add_option("--loss", ta.loss, "softmax | sigmoid");
  train_cmd->add_flag("--null-bg", ta.null_bg,
                      "null background: no background channel, sigmoid rule");
  train_cmd->add_option("--mask", ta.mask,
                        "train-time input masking (none|fg_only|bg_only|shape_only)");
  train_cmd->add_option("--eval-mask", ta.eval_mask,
                        "validation masking (defaults to --mask)");
  train_cmd->add_option("--sample-keep", ta.sample_keep,
                        "loss sampling keep probability");
  train_cmd->add_flag("--augment", ta.augment, "mirror/jitter augmentation");
  train_cmd->add_option("--jitter", ta.jitter, "max augment translation");
  train_cmd->add_flag("--fixed-order", ta.fixed_order,
                      "fixed data order (controlled comparisons)");
  train_cmd->add_option("--init-ckpt", ta.init_ckpt,
                        "initialize parameters from a checkpoint");
  train_cmd->add_option("--lr-mult", ta.lr_mult, "extra learning rate factor");
  train_cmd->add_flag("--calibrate", ta.calibrate,
                      "calibrate stream scales before training");
  train_cmd->add_option("--threads", ta.threads, "evaluation thread cap");

  // eval
  std::string e_net, e_ckpt, e_data, e_mask = "none";
  std::int64_t e_classes = 5;
  bool e_null_bg = false, e_exclude_bg = false, e_sigmoid = false;
  int e_threads = 1;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--net", e_net)->required();
  eval_cmd->add_option("--ckpt", e_ckpt)->required();
  eval_cmd->add_option("--data", e_data)->required();
  eval_cmd->add_option("--mask", e_mask);
  eval_cmd->add_option("--classes", e_classes);
  eval_cmd->add_flag("--null-bg", e_null_bg);
  eval_cmd->add_flag("--exclude-bg", e_exclude_bg);
  eval_cmd->add_flag("--sigmoid", e_sigmoid);
  eval_cmd->add_option("--threads", e_threads);

  // infer
  std::string i_net, i_ckpt, i_image, i_out;
  std::int64_t i_classes = 5;
  bool i_null_bg = false;
  auto* infer_cmd = app.add_subcommand("infer", "label one image");
  infer_cmd->add_option("--net", i_net)->required();
  infer_cmd->add_option("--ckpt", i_ckpt)->required();
  infer_cmd->add_option("--image", i_image)->required();
  infer_cmd->add_option("--out", i_out)->required();
  infer_cmd->add_option("--classes", i_classes);
  infer_cmd->add_flag("--null-bg", i_null_bg);

  // bound
  std::string b_data, b_factors = "1,2,4,8,16";
  std::int64_t b_classes = 5;
  auto* bound_cmd =
      app.add_subcommand("bound", "IU upper bounds by downsampling factor");
  bound_cmd->add_option("--data", b_data)->required();
  bound_cmd->add_option("--factors", b_factors, "comma-separated factors");
  bound_cmd->add_option("--classes", b_classes);

  // probe
  std::string p_net;
  auto* probe_cmd =
      app.add_subcommand("probe", "receptive field / stride / offset table");
  probe_cmd->add_option("--net", p_net)->required();

  // equiv
  double q_p = 0.9;
  std::int64_t q_k = 20, q_kp = 1, q_horizon = 12;
  auto* equiv_cmd = app.add_subcommand(
      "equiv", "momentum/batch-size equivalence and coefficient series");
  equiv_cmd->add_option("p", q_p, "momentum")->required();
  equiv_cmd->add_option("k", q_k, "batch size")->required();
  equiv_cmd->add_option("k_prime", q_kp, "target batch size")->required();
  equiv_cmd->add_option("--horizon", q_horizon, "series length to print");

  // gen
  std::string g_out;
  std::int64_t g_count = 1000;
  ShapesConfig g_cfg;
  auto* gen_cmd = app.add_subcommand("gen", "generate a shapes dataset");
  gen_cmd->add_option("--out", g_out)->required();
  gen_cmd->add_option("--count", g_count);
  gen_cmd->add_option("--seed", g_cfg.seed)->required();
  gen_cmd->add_option("--size", g_cfg.image_size);
  gen_cmd->add_option("--noise", g_cfg.noise_sigma);
  gen_cmd->add_option("--min-shapes", g_cfg.min_shapes);
  gen_cmd->add_option("--max-shapes", g_cfg.max_shapes);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(ta);
    if (eval_cmd->parsed())
      return cmd_eval(e_net, e_ckpt, e_data, e_mask, e_classes, e_null_bg,
                      e_exclude_bg, e_sigmoid, e_threads);
    if (infer_cmd->parsed())
      return cmd_infer(i_net, i_ckpt, i_image, i_out, i_classes, i_null_bg);
    if (bound_cmd->parsed()) return cmd_bound(b_data, b_factors, b_classes);
    if (probe_cmd->parsed()) return cmd_probe(p_net);
    if (equiv_cmd->parsed()) return cmd_equiv(q_p, q_k, q_kp, q_horizon);
    if (gen_cmd->parsed()) return cmd_gen(g_out, g_count, g_cfg);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidParamError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
