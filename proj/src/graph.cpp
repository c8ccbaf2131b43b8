#include "fcn/graph.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fcn/rng.hpp"

namespace fcn {

int Graph::push_node(Node n) {
  if (node_by_id_.count(n.id))
    throw InvalidParamError("graph: duplicate node id '" + n.id + "'");
  for (int in : n.inputs) check_input_index(in);
  const int idx = static_cast<int>(nodes_.size());
  node_by_id_[n.id] = idx;
  nodes_.push_back(std::move(n));
  has_forward_ = false;
  return idx;
}

void Graph::check_input_index(int idx) const {
  if (idx < 0 || idx >= static_cast<int>(nodes_.size()))
    throw InvalidParamError("graph: input node index " + std::to_string(idx) +
                            " does not precede this node");
}

int Graph::add_input(const std::string& id) {
  Node n;
  n.id = id;
  n.op = OpKind::kInput;
  n.input_index = static_cast<int>(inputs_.size());
  const int idx = push_node(std::move(n));
  inputs_.push_back(idx);
  return idx;
}

int Graph::add_conv(const std::string& id, int input,
                    const std::string& param_base, std::int64_t stride,
                    std::int64_t pad, std::int64_t dilation) {
  if (!has_param(param_base + ".w") || !has_param(param_base + ".b"))
    throw InvalidParamError("graph: conv param '" + param_base +
                            "' not registered");
  Node n;
  n.id = id;
  n.op = OpKind::kConv;
  n.inputs = {input};
  n.weight = param_base + ".w";
  n.bias = param_base + ".b";
  n.stride = stride;
  n.pad = pad;
  n.dilation = dilation;
  return push_node(std::move(n));
}

int Graph::add_relu(const std::string& id, int input) {
  Node n;
  n.id = id;
  n.op = OpKind::kRelu;
  n.inputs = {input};
  return push_node(std::move(n));
}

int Graph::add_pool(const std::string& id, int input, const PoolParams& p) {
  Node n;
  n.id = id;
  n.op = OpKind::kPool;
  n.inputs = {input};
  n.pool = p;
  return push_node(std::move(n));
}

int Graph::add_dropout(const std::string& id, int input, double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw InvalidParamError("dropout rate must be in [0, 1)");
  Node n;
  n.id = id;
  n.op = OpKind::kDropout;
  n.inputs = {input};
  n.rate = rate;
  return push_node(std::move(n));
}

int Graph::add_upsample(const std::string& id, int input,
                        const std::string& param_name) {
  if (!has_param(param_name))
    throw InvalidParamError("graph: upsample param '" + param_name +
                            "' not registered");
  Node n;
  n.id = id;
  n.op = OpKind::kUpsample;
  n.inputs = {input};
  n.weight = param_name;
  return push_node(std::move(n));
}

int Graph::add_scale(const std::string& id, int input, double scale) {
  Node n;
  n.id = id;
  n.op = OpKind::kScale;
  n.inputs = {input};
  n.scale = scale;
  return push_node(std::move(n));
}

int Graph::add_add(const std::string& id, const std::vector<int>& inputs) {
  if (inputs.size() < 2)
    throw InvalidParamError("graph: add node needs at least two inputs");
  Node n;
  n.id = id;
  n.op = OpKind::kAdd;
  n.inputs = inputs;
  return push_node(std::move(n));
}

int Graph::add_crop(const std::string& id, int src, int ref, std::int64_t off_h,
                    std::int64_t off_w) {
  Node n;
  n.id = id;
  n.op = OpKind::kCrop;
  n.inputs = {src, ref};
  n.crop_h = off_h;
  n.crop_w = off_w;
  return push_node(std::move(n));
}

void Graph::set_output(int node) {
  check_input_index(node);
  output_ = node;
}

void Graph::add_conv_param(const std::string& base, Tensor weights,
                           const std::vector<double>& bias) {
  if (static_cast<std::int64_t>(bias.size()) != weights.dims.n)
    throw ShapeError("conv param: bias length != out channels");
  Tensor b({1, static_cast<std::int64_t>(bias.size()), 1, 1});
  b.data = bias;
  if (params_.count(base + ".w") || params_.count(base + ".b"))
    throw InvalidParamError("graph: duplicate param '" + base + "'");
  param_order_.push_back(base + ".w");
  params_.emplace(base + ".w", Param(std::move(weights)));
  param_order_.push_back(base + ".b");
  params_.emplace(base + ".b", Param(std::move(b), /*bias=*/true));
}

void Graph::add_upsample_param(const std::string& name,
                               const UpsampleParams& p) {
  if (p.kernel.dims.h != upsample_kernel_size(p.factor) ||
      p.kernel.dims.h != p.kernel.dims.w || p.kernel.dims.c != 1)
    throw InvalidParamError("upsample param: kernel must be (c,1,k,k) with k=2f-(f mod 2)");
  if (params_.count(name))
    throw InvalidParamError("graph: duplicate param '" + name + "'");
  param_order_.push_back(name);
  params_.emplace(name,
                  Param(p.kernel, /*bias=*/false, p.learnable, p.factor));
}

void Graph::add_scalar_param(const std::string& name, double value) {
  if (params_.count(name))
    throw InvalidParamError("graph: duplicate param '" + name + "'");
  Tensor t({1, 1, 1, 1});
  t.data[0] = value;
  param_order_.push_back(name);
  params_.emplace(name, Param(std::move(t), false, /*learnable=*/false));
}

bool Graph::has_param(const std::string& name) const {
  return params_.count(name) > 0;
}

Param& Graph::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end())
    throw InvalidParamError("graph: unknown param '" + name + "'");
  return it->second;
}

const Param& Graph::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw InvalidParamError("graph: unknown param '" + name + "'");
  return it->second;
}

int Graph::node_index(const std::string& id) const {
  auto it = node_by_id_.find(id);
  if (it == node_by_id_.end())
    throw InvalidParamError("graph: unknown node '" + id + "'");
  return it->second;
}

const Tensor& Graph::node_output(const std::string& id) const {
  return node_output(node_index(id));
}

const Tensor& Graph::node_output(int idx) const {
  if (!has_forward_) throw StateError("graph: no forward pass cached");
  return out_cache_.at(static_cast<std::size_t>(idx));
}

ConvParams Graph::conv_at(const Node& n) const {
  ConvParams p;
  p.weights = param(n.weight).value;
  const Tensor& b = param(n.bias).value;
  p.bias = b.data;
  p.stride = n.stride;
  p.pad = n.pad;
  p.dilation = n.dilation;
  return p;
}

UpsampleParams Graph::upsample_at(const Node& n) const {
  const Param& pp = param(n.weight);
  UpsampleParams p;
  p.factor = pp.up_factor;
  p.kernel = pp.value;
  p.learnable = pp.learnable;
  return p;
}

Tensor Graph::forward(const Tensor& input, const FwdOptions& opts) {
  if (inputs_.size() != 1)
    throw InvalidParamError("graph: single-input forward on multi-input net");
  std::map<std::string, Tensor> m;
  m[nodes_[static_cast<std::size_t>(inputs_[0])].id] = input;
  return forward(m, opts);
}

Tensor Graph::forward(const std::map<std::string, Tensor>& inputs,
                      const FwdOptions& opts) {
  if (output_ < 0) throw StateError("graph: no output designated");
  out_cache_.assign(nodes_.size(), Tensor());
  pool_cache_.assign(nodes_.size(), PoolResult());
  mask_cache_.assign(nodes_.size(), {});
  has_forward_ = false;
  last_opts_ = opts;

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    try {
      switch (n.op) {
        case OpKind::kInput: {
          auto it = inputs.find(n.id);
          if (it == inputs.end())
            throw StateError("missing input tensor");
          out_cache_[i] = it->second;
          break;
        }
        case OpKind::kConv:
          out_cache_[i] = conv2d_forward(
              out_cache_[static_cast<std::size_t>(n.inputs[0])], conv_at(n));
          break;
        case OpKind::kRelu:
          out_cache_[i] =
              relu_forward(out_cache_[static_cast<std::size_t>(n.inputs[0])]);
          break;
        case OpKind::kPool:
          pool_cache_[i] = pool_forward(
              out_cache_[static_cast<std::size_t>(n.inputs[0])], n.pool);
          out_cache_[i] = pool_cache_[i].y;
          break;
        case OpKind::kDropout: {
          DropoutParams dp{n.rate, opts.train};
          auto r = dropout_forward(
              out_cache_[static_cast<std::size_t>(n.inputs[0])], dp,
              derive_seed(opts.seed, kSeedDropout, i));
          out_cache_[i] = std::move(r.y);
          mask_cache_[i] = std::move(r.mask);
          break;
        }
        case OpKind::kUpsample:
          out_cache_[i] = upsample_forward(
              out_cache_[static_cast<std::size_t>(n.inputs[0])],
              upsample_at(n));
          break;
        case OpKind::kScale: {
          const Tensor& x = out_cache_[static_cast<std::size_t>(n.inputs[0])];
          Tensor y(x.dims);
          for (std::size_t k = 0; k < x.data.size(); ++k)
            y.data[k] = x.data[k] * n.scale;
          out_cache_[i] = std::move(y);
          break;
        }
        case OpKind::kAdd: {
          Tensor acc = out_cache_[static_cast<std::size_t>(n.inputs[0])];
          for (std::size_t k = 1; k < n.inputs.size(); ++k)
            acc = elementwise_add(
                acc, out_cache_[static_cast<std::size_t>(n.inputs[k])]);
          out_cache_[i] = std::move(acc);
          break;
        }
        case OpKind::kCrop: {
          const Tensor& src = out_cache_[static_cast<std::size_t>(n.inputs[0])];
          const Tensor& ref = out_cache_[static_cast<std::size_t>(n.inputs[1])];
          out_cache_[i] = crop(src, n.crop_h, n.crop_w, ref.dims.h, ref.dims.w);
          break;
        }
      }
    } catch (const Error& e) {
      throw ShapeError("node '" + n.id + "': " + e.what());
    }
  }
  has_forward_ = true;
  return out_cache_[static_cast<std::size_t>(output_)];
}

void Graph::backward(const Tensor& grad_at_output) {
  if (!has_forward_) throw StateError("graph: backward before forward");
  const Tensor& out = out_cache_[static_cast<std::size_t>(output_)];
  if (!(grad_at_output.dims == out.dims))
    throw ShapeError("graph: output grad dims " + grad_at_output.dims.str() +
                     " != output dims " + out.dims.str());

  grad_cache_.assign(nodes_.size(), Tensor());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    grad_cache_[i] = Tensor(out_cache_[i].dims);
  grad_cache_[static_cast<std::size_t>(output_)] = grad_at_output;

  for (std::size_t ri = nodes_.size(); ri-- > 0;) {
    const Node& n = nodes_[ri];
    const Tensor& g = grad_cache_[ri];
    switch (n.op) {
      case OpKind::kInput:
        break;
      case OpKind::kConv: {
        const std::size_t src = static_cast<std::size_t>(n.inputs[0]);
        ConvGrads cg = conv2d_backward(out_cache_[src], conv_at(n), g);
        Tensor& gx = grad_cache_[src];
        for (std::size_t k = 0; k < gx.data.size(); ++k)
          gx.data[k] += cg.grad_x.data[k];
        Param& pw = param(n.weight);
        for (std::size_t k = 0; k < pw.grad.data.size(); ++k)
          pw.grad.data[k] += cg.grad_w.data[k];
        Param& pb = param(n.bias);
        for (std::size_t k = 0; k < pb.grad.data.size(); ++k)
          pb.grad.data[k] += cg.grad_b[k];
        break;
      }
      case OpKind::kRelu: {
        const std::size_t src = static_cast<std::size_t>(n.inputs[0]);
        Tensor gx = relu_backward(out_cache_[src], g);
        Tensor& acc = grad_cache_[src];
        for (std::size_t k = 0; k < acc.data.size(); ++k)
          acc.data[k] += gx.data[k];
        break;
      }
      case OpKind::kPool: {
        const std::size_t src = static_cast<std::size_t>(n.inputs[0]);
        Tensor gx = pool_backward(n.pool, out_cache_[src].dims, pool_cache_[ri], g);
        Tensor& acc = grad_cache_[src];
        for (std::size_t k = 0; k < acc.data.size(); ++k)
          acc.data[k] += gx.data[k];
        break;
      }
      case OpKind::kDropout: {
        const std::size_t src = static_cast<std::size_t>(n.inputs[0]);
        DropoutParams dp{n.rate, last_opts_.train};
        Tensor gx = dropout_backward(dp, mask_cache_[ri], g);
        Tensor& acc = grad_cache_[src];
        for (std::size_t k = 0; k < acc.data.size(); ++k)
          acc.data[k] += gx.data[k];
        break;
      }
      case OpKind::kUpsample: {
        const std::size_t src = static_cast<std::size_t>(n.inputs[0]);
        UpsampleGrads ug = upsample_backward(out_cache_[src], upsample_at(n), g);
        Tensor& acc = grad_cache_[src];
        for (std::size_t k = 0; k < acc.data.size(); ++k)
          acc.data[k] += ug.grad_x.data[k];
        Param& pk = param(n.weight);
        if (pk.learnable)
          for (std::size_t k = 0; k < pk.grad.data.size(); ++k)
            pk.grad.data[k] += ug.grad_kernel.data[k];
        break;
      }
      case OpKind::kScale: {
        const std::size_t src = static_cast<std::size_t>(n.inputs[0]);
        Tensor& acc = grad_cache_[src];
        for (std::size_t k = 0; k < acc.data.size(); ++k)
          acc.data[k] += g.data[k] * n.scale;
        break;
      }
      case OpKind::kAdd:
        for (int in : n.inputs) {
          Tensor& acc = grad_cache_[static_cast<std::size_t>(in)];
          for (std::size_t k = 0; k < acc.data.size(); ++k)
            acc.data[k] += g.data[k];
        }
        break;
      case OpKind::kCrop: {
        const std::size_t src = static_cast<std::size_t>(n.inputs[0]);
        Tensor& acc = grad_cache_[src];
        for (std::int64_t b = 0; b < g.dims.n; ++b)
          for (std::int64_t c = 0; c < g.dims.c; ++c)
            for (std::int64_t i = 0; i < g.dims.h; ++i)
              for (std::int64_t j = 0; j < g.dims.w; ++j)
                acc.at(b, c, i + n.crop_h, j + n.crop_w) += g.at(b, c, i, j);
        break;
      }
    }
  }
}

void Graph::zero_grads() {
  for (auto& [name, p] : params_)
    std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

// ---- checkpoint I/O -----------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'C', 'N', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void put_f64(std::ostream& os, double v) {
  put_u64(os, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError("checkpoint truncated", static_cast<std::size_t>(is.tellg()));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw ParseError("checkpoint truncated", static_cast<std::size_t>(is.tellg()));
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  return std::bit_cast<double>(get_u64(is));
}

}  // namespace

void Graph::save_checkpoint(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  os.write(kMagic, 8);
  put_u32(os, 1);
  put_u32(os, static_cast<std::uint32_t>(param_order_.size()));
  for (const auto& name : param_order_) {
    const Param& p = params_.at(name);
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, 4);
    put_u64(os, static_cast<std::uint64_t>(p.value.dims.n));
    put_u64(os, static_cast<std::uint64_t>(p.value.dims.c));
    put_u64(os, static_cast<std::uint64_t>(p.value.dims.h));
    put_u64(os, static_cast<std::uint64_t>(p.value.dims.w));
    for (double v : p.value.data) put_f64(os, v);
  }
  if (!os) throw IoError("short write on checkpoint '" + path + "'");
}

void Graph::load_checkpoint(const std::string& path, bool allow_missing) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("not a checkpoint file (bad magic)", 0);
  const std::uint32_t version = get_u32(is);
  if (version != 1)
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 8);
  const std::uint32_t count = get_u32(is);
  std::size_t loaded = 0;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw ParseError("checkpoint truncated in name",
                              static_cast<std::size_t>(is.tellg()));
    const std::uint32_t ndims = get_u32(is);
    if (ndims != 4)
      throw ParseError("checkpoint: expected 4 dims",
                       static_cast<std::size_t>(is.tellg()));
    Shape4 dims;
    dims.n = static_cast<std::int64_t>(get_u64(is));
    dims.c = static_cast<std::int64_t>(get_u64(is));
    dims.h = static_cast<std::int64_t>(get_u64(is));
    dims.w = static_cast<std::int64_t>(get_u64(is));
    detail::check_shape(dims);
    auto it = params_.find(name);
    if (it == params_.end())
      throw ParseError("checkpoint param '" + name + "' unknown to this graph",
                       static_cast<std::size_t>(is.tellg()));
    if (!(it->second.value.dims == dims))
      throw ShapeError("checkpoint param '" + name + "' dims " + dims.str() +
                       " != graph dims " + it->second.value.dims.str());
    for (double& v : it->second.value.data) v = get_f64(is);
    ++loaded;
  }
  if (!allow_missing && loaded != param_order_.size())
    throw StateError("checkpoint covers " + std::to_string(loaded) + " of " +
                     std::to_string(param_order_.size()) + " graph params");
}

}  // namespace fcn
