#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fcn/layers.hpp"
#include "fcn/resampling.hpp"
#include "fcn/tensor.hpp"

namespace fcn {

/// Named parameter with a paired gradient buffer. Gradients accumulate
/// (+=) across backward calls; zero_grads separates optimizer iterations.
struct Param {
  Tensor value;
  Tensor grad;
  bool is_bias = false;
  bool learnable = true;
  std::int64_t up_factor = 0;  // nonzero marks an upsampling kernel

  explicit Param(Tensor v, bool bias = false, bool learn = true,
                 std::int64_t factor = 0)
      : value(std::move(v)),
        grad(value.dims),
        is_bias(bias),
        learnable(learn),
        up_factor(factor) {}
};

enum class OpKind {
  kInput,
  kConv,
  kRelu,
  kPool,
  kDropout,
  kUpsample,
  kScale,
  kAdd,
  kCrop,
};

struct Node {
  std::string id;
  OpKind op = OpKind::kInput;
  std::vector<int> inputs;
  // op-specific configuration
  std::string weight;  // conv "<base>.w" / upsample kernel name
  std::string bias;    // conv "<base>.b"
  std::int64_t stride = 1, pad = 0, dilation = 1;  // conv geometry
  PoolParams pool;
  double rate = 0.0;   // dropout
  double scale = 1.0;  // stream scaling
  std::int64_t crop_h = 0, crop_w = 0;  // inputs = {src, reference}
  int input_index = -1;
};

/// DAG of layer nodes with whole-image forward evaluation and reverse-mode
/// gradient accumulation. Topological order is fixed at construction;
/// shapes are recomputed per forward call, so one graph serves inputs of
/// any size. Copyable; copies share nothing.
class Graph {
 public:
  struct FwdOptions {
    bool train = false;       // enables dropout
    std::uint64_t seed = 0;   // root seed for dropout masks
  };

  int add_input(const std::string& id);
  int add_conv(const std::string& id, int input, const std::string& param_base,
               std::int64_t stride = 1, std::int64_t pad = 0,
               std::int64_t dilation = 1);
  int add_relu(const std::string& id, int input);
  int add_pool(const std::string& id, int input, const PoolParams& p);
  int add_dropout(const std::string& id, int input, double rate);
  int add_upsample(const std::string& id, int input,
                   const std::string& param_name);
  int add_scale(const std::string& id, int input, double scale);
  int add_add(const std::string& id, const std::vector<int>& inputs);
  int add_crop(const std::string& id, int src, int ref, std::int64_t off_h,
               std::int64_t off_w);
  void set_output(int node);

  void add_conv_param(const std::string& base, Tensor weights,
                      const std::vector<double>& bias);
  void add_upsample_param(const std::string& name, const UpsampleParams& p);
  void add_scalar_param(const std::string& name, double value);  // bookkeeping

  bool has_param(const std::string& name) const;
  Param& param(const std::string& name);
  const Param& param(const std::string& name) const;
  const std::vector<std::string>& param_names() const { return param_order_; }

  Tensor forward(const std::map<std::string, Tensor>& inputs,
                 const FwdOptions& opts);
  Tensor forward(const Tensor& input, const FwdOptions& opts);
  Tensor forward(const std::map<std::string, Tensor>& inputs) {
    return forward(inputs, FwdOptions{});
  }
  Tensor forward(const Tensor& input) { return forward(input, FwdOptions{}); }
  void backward(const Tensor& grad_at_output);
  void zero_grads();

  int node_index(const std::string& id) const;
  const std::vector<Node>& nodes() const { return nodes_; }
  Node& node(int idx) { return nodes_.at(static_cast<std::size_t>(idx)); }
  int output_node() const { return output_; }
  const std::vector<int>& input_nodes() const { return inputs_; }
  bool has_forward() const { return has_forward_; }
  /// Cached activation from the last forward pass.
  const Tensor& node_output(const std::string& id) const;
  const Tensor& node_output(int idx) const;

  // Checkpoint file: "FCNCKPT1", u32 version, u32 count, then per
  // parameter: u32 name length, name bytes, u32 ndims (4), 4 x u64 dims,
  // float64 values; every field little-endian.
  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path, bool allow_missing = false);

 private:
  int push_node(Node n);
  void check_input_index(int idx) const;
  UpsampleParams upsample_at(const Node& n) const;
  ConvParams conv_at(const Node& n) const;

  std::vector<Node> nodes_;
  std::map<std::string, int> node_by_id_;
  std::vector<int> inputs_;
  int output_ = -1;

  std::vector<std::string> param_order_;
  std::map<std::string, Param> params_;

  // per-forward caches
  std::vector<Tensor> out_cache_;
  std::vector<Tensor> grad_cache_;
  std::vector<PoolResult> pool_cache_;
  std::vector<std::vector<std::uint8_t>> mask_cache_;
  bool has_forward_ = false;
  FwdOptions last_opts_;
};

}  // namespace fcn
