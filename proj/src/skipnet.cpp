#include "fcn/skipnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fcn/rng.hpp"

namespace fcn {

namespace {

const char* kKinds[] = {"input", "conv", "relu", "maxpool", "avgpool",
                        "dropout"};

bool known_kind(const std::string& k) {
  for (const char* s : kKinds)
    if (k == s) return true;
  return false;
}

}  // namespace

NetDescription parse_net_text(const std::string& text) {
  NetDescription desc;
  std::size_t line_start = 0;
  std::size_t pos = 0;
  const std::size_t len = text.size();
  while (pos <= len) {
    if (pos == len || text[pos] == '\n') {
      std::string line = text.substr(line_start, pos - line_start);
      const std::size_t at = line_start;
      // strip comments
      if (const auto h = line.find('#'); h != std::string::npos)
        line.resize(h);
      std::istringstream ss(line);
      std::string first;
      if (ss >> first) {
        if (first == "skip") {
          SkipSpec sk;
          if (!(ss >> sk.tap >> sk.stream_scale >> sk.factor))
            throw ParseError("skip line needs: skip <tap> <scale> <factor>",
                             at);
          if (sk.factor < 1) throw ParseError("skip factor must be >= 1", at);
          desc.skips.push_back(sk);
        } else {
          LayerLine l;
          l.name = first;
          if (!(ss >> l.kind >> l.k >> l.s >> l.pad >> l.dilation >>
                l.channels))
            throw ParseError(
                "layer line needs: name kind k s pad dilation channels [tap]",
                at);
          ss >> l.tap;  // optional
          if (!known_kind(l.kind))
            throw ParseError("unknown layer kind '" + l.kind + "'", at);
          if (l.kind != "dropout" && (l.k < 1 || l.s < 1 || l.dilation < 1))
            throw ParseError("layer '" + l.name + "': k/s/dilation >= 1", at);
          if (l.pad < 0 || l.channels < 1)
            throw ParseError("layer '" + l.name + "': pad >= 0, channels >= 1",
                             at);
          desc.layers.push_back(l);
        }
      }
      line_start = pos + 1;
      if (pos == len) break;
    }
    ++pos;
  }
  if (desc.layers.empty() || desc.layers.front().kind != "input")
    throw ParseError("net description must start with an input line", 0);
  return desc;
}

NetDescription parse_net_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read net description '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_net_text(buf.str());
}

std::string format_net(const NetDescription& desc) {
  std::ostringstream os;
  for (const LayerLine& l : desc.layers) {
    os << l.name << ' ' << l.kind << ' ' << l.k << ' ' << l.s << ' ' << l.pad
       << ' ' << l.dilation << ' ' << l.channels;
    if (!l.tap.empty()) os << ' ' << l.tap;
    os << '\n';
  }
  for (const SkipSpec& s : desc.skips)
    os << "skip " << s.tap << ' ' << s.stream_scale << ' ' << s.factor
       << '\n';
  return os.str();
}

NetDescription backbone_description(const BackboneSpec& spec) {
  if (spec.stages.empty())
    throw InvalidParamError("backbone: at least one stage");
  NetDescription d;
  d.layers.push_back({"data", "input", 1, 1, 0, 1, spec.in_channels, ""});
  std::int64_t channels = spec.in_channels;
  const std::int64_t n_stages =
      spec.truncate_after_stage >= 0
          ? std::min<std::int64_t>(spec.truncate_after_stage + 1,
                                   static_cast<std::int64_t>(spec.stages.size()))
          : static_cast<std::int64_t>(spec.stages.size());
  std::int64_t pools = 0;
  for (std::int64_t st = 0; st < n_stages; ++st) {
    const StageSpec& stage = spec.stages[static_cast<std::size_t>(st)];
    for (std::int64_t c = 0; c < stage.convs; ++c) {
      const std::string base =
          "conv" + std::to_string(st + 1) + "_" + std::to_string(c + 1);
      d.layers.push_back({base, "conv", 3, 1, 1, 1, stage.channels, ""});
      d.layers.push_back({"relu" + std::to_string(st + 1) + "_" +
                              std::to_string(c + 1),
                          "relu", 1, 1, 0, 1, stage.channels, ""});
      channels = stage.channels;
    }
    if (stage.pool) {
      ++pools;
      const std::string name = "pool" + std::to_string(pools);
      // every pool below the deepest is a candidate skip tap
      d.layers.push_back({name, "maxpool", 2, 2, 0, 1, channels, name});
    }
  }
  // the deepest pool is the scored grid, not a junction tap
  if (!d.layers.empty() && !d.layers.back().tap.empty())
    d.layers.back().tap.clear();
  return d;
}

namespace {

struct BuildState {
  std::vector<TapInfo> taps;
  std::vector<LayerField> deep_path;  // field chain of the scored stream
  int last_node = -1;
  std::int64_t channels = 0;
  std::int64_t stride = 1;
};

LayerField line_field(const LayerLine& l) {
  if (l.kind == "conv" || l.kind == "maxpool" || l.kind == "avgpool")
    return LayerField::conv({l.k, l.s, l.pad, l.dilation});
  return LayerField::conv({1, 1, 0, 1});
}

BuildState emit_backbone(Graph& g, const NetDescription& desc,
                         std::uint64_t init_seed) {
  Rng init(derive_seed(init_seed, kSeedInit));
  BuildState st;
  for (std::size_t li = 0; li < desc.layers.size(); ++li) {
    const LayerLine& l = desc.layers[li];
    if (l.kind == "input") {
      if (li != 0) throw InvalidParamError("input line must come first");
      st.last_node = g.add_input(l.name);
      st.channels = l.channels;
      continue;
    }
    if (st.last_node < 0)
      throw InvalidParamError("net description must start with input");
    if (l.kind == "conv") {
      Tensor w({l.channels, st.channels, l.k, l.k});
      // scaled uniform fan-in init; score layers are created elsewhere
      const double bound =
          std::sqrt(3.0 / static_cast<double>(st.channels * l.k * l.k));
      for (double& v : w.data) v = init.uniform(-bound, bound);
      g.add_conv_param(l.name, std::move(w),
                       std::vector<double>(static_cast<std::size_t>(l.channels),
                                           0.0));
      st.last_node =
          g.add_conv(l.name, st.last_node, l.name, l.s, l.pad, l.dilation);
      st.channels = l.channels;
      st.stride *= l.s;
    } else if (l.kind == "relu") {
      if (l.channels != st.channels)
        throw InvalidParamError("layer '" + l.name + "': channel mismatch");
      st.last_node = g.add_relu(l.name, st.last_node);
    } else if (l.kind == "maxpool" || l.kind == "avgpool") {
      if (l.channels != st.channels)
        throw InvalidParamError("layer '" + l.name + "': channel mismatch");
      PoolParams p;
      p.kind = l.kind == "maxpool" ? PoolParams::kMax : PoolParams::kAvg;
      p.kernel = l.k;
      p.stride = l.s;
      p.pad = l.pad;
      p.dilation = l.dilation;
      st.last_node = g.add_pool(l.name, st.last_node, p);
      st.stride *= l.s;
    } else if (l.kind == "dropout") {
      if (l.channels != st.channels)
        throw InvalidParamError("layer '" + l.name + "': channel mismatch");
      st.last_node = g.add_dropout(l.name, st.last_node,
                                   static_cast<double>(l.k) / 100.0);
    }
    st.deep_path.push_back(line_field(l));
    if (!l.tap.empty()) {
      for (const TapInfo& t : st.taps)
        if (t.name == l.tap)
          throw InvalidParamError("duplicate tap name '" + l.tap + "'");
      TapInfo tap;
      tap.name = l.tap;
      tap.node = st.last_node;
      tap.stride = st.stride;
      tap.channels = st.channels;
      tap.field = chain(std::span<const LayerField>(st.deep_path));
      st.taps.push_back(tap);
    }
  }
  return st;
}

Tensor zero_conv_weights(std::int64_t out_c, std::int64_t in_c) {
  return Tensor({out_c, in_c, 1, 1});
}

}  // namespace

SkipNet build(const NetDescription& desc, std::int64_t n_score_channels,
              std::uint64_t init_seed) {
  if (n_score_channels < 1)
    throw InvalidParamError("build: need at least one score channel");
  SkipNet net;
  net.desc = desc;
  net.n_score_channels = n_score_channels;

  BuildState st = emit_backbone(net.graph, desc, init_seed);
  net.taps = st.taps;
  net.total_stride = st.stride;
  net.deep_tap = desc.layers.back().name;

  // main score layer, zero-initialized like every class scoring layer
  net.graph.add_conv_param("score",
                           zero_conv_weights(n_score_channels, st.channels),
                           std::vector<double>(
                               static_cast<std::size_t>(n_score_channels), 0.0));
  int stream = net.graph.add_conv("score", st.last_node, "score", 1, 0, 1);
  std::vector<LayerField> stream_path = st.deep_path;
  stream_path.push_back(LayerField::conv({1, 1, 0, 1}));

  // junction grids: every declared tap strictly between the scored stride
  // and stride 1, coarsest first
  std::vector<const TapInfo*> junctions;
  for (const TapInfo& t : net.taps)
    if (t.stride < st.stride && t.stride > 1) junctions.push_back(&t);
  std::sort(junctions.begin(), junctions.end(),
            [](const TapInfo* a, const TapInfo* b) {
              return a->stride > b->stride;
            });

  for (std::size_t i = 0; i < desc.skips.size(); ++i) {
    const SkipSpec& sk = desc.skips[i];
    const bool at_junction =
        std::any_of(junctions.begin(), junctions.end(),
                    [&](const TapInfo* t) { return t->name == sk.tap; });
    if (!at_junction)
      throw InvalidParamError("skip tap '" + sk.tap +
                              "' is not a declared junction tap");
    for (std::size_t j = i + 1; j < desc.skips.size(); ++j)
      if (desc.skips[j].tap == sk.tap)
        throw InvalidParamError("duplicate skip tap '" + sk.tap + "'");
  }

  std::int64_t cur_stride = st.stride;
  Rational cur_offset = chain(std::span<const LayerField>(stream_path)).offset;

  auto add_upsample_stage = [&](std::int64_t target_stride, bool learnable) {
    if (cur_stride % target_stride != 0)
      throw AlignmentError("upsample stage: stride " +
                           std::to_string(cur_stride) +
                           " not divisible by target " +
                           std::to_string(target_stride));
    const std::int64_t f = cur_stride / target_stride;
    const std::string name = "up" + std::to_string(target_stride);
    UpsampleParams up = bilinear_kernel(f, n_score_channels);
    up.learnable = learnable;
    net.graph.add_upsample_param(name, up);
    stream = net.graph.add_upsample(name, stream, name);
    const LayerField lf = LayerField::upsample(f, up.kernel.dims.h);
    stream_path.push_back(lf);
    cur_offset = cur_offset + lf.center * Rational(cur_stride);
    cur_stride = target_stride;
  };

  for (const TapInfo* tap : junctions) {
    const std::int64_t derived_factor = cur_stride / tap->stride;
    add_upsample_stage(tap->stride, /*learnable=*/true);
    const SkipSpec* sk = nullptr;
    for (const SkipSpec& s : desc.skips)
      if (s.tap == tap->name) sk = &s;
    if (!sk) continue;
    if (sk->factor != derived_factor)
      throw InvalidParamError(
          "skip '" + tap->name + "': declared factor " +
          std::to_string(sk->factor) + " != grid ratio " +
          std::to_string(derived_factor));
    const std::string t = tap->name;
    int scaled = net.graph.add_scale("scale_" + t, tap->node,
                                     sk->stream_scale);
    net.graph.add_conv_param("score_" + t,
                             zero_conv_weights(n_score_channels, tap->channels),
                             std::vector<double>(
                                 static_cast<std::size_t>(n_score_channels),
                                 0.0));
    int skip_score =
        net.graph.add_conv("score_" + t, scaled, "score_" + t, 1, 0, 1);
    // align the two grids exactly: the earlier-origin stream loses its lead
    const Rational skip_offset = tap->field.offset;
    const Rational diff = (skip_offset - cur_offset) / Rational(tap->stride);
    if (!diff.is_integer())
      throw AlignmentError("skip '" + t + "': required crop " + diff.str() +
                           " is not an integer");
    const std::int64_t d = diff.to_integer();
    int fused;
    if (d <= 0) {
      int cropped =
          net.graph.add_crop("crop_" + t, skip_score, stream, -d, -d);
      fused = net.graph.add_add("fuse_" + t, {stream, cropped});
      // fused grid keeps the upsampled stream's origin
    } else {
      int cropped =
          net.graph.add_crop("crop_" + t, stream, skip_score, d, d);
      fused = net.graph.add_add("fuse_" + t, {cropped, skip_score});
      cur_offset = skip_offset;
    }
    stream = fused;
  }

  add_upsample_stage(1, /*learnable=*/false);  // fixed bilinear final stage

  // crop the restored map into exact registration with the input
  const Rational final_crop = Rational(0) - cur_offset;
  if (!final_crop.is_integer() || final_crop.num() < 0)
    throw AlignmentError("output grid offset " + cur_offset.str() +
                         " cannot be cropped to the input grid");
  const int input_node = net.graph.input_nodes().at(0);
  stream = net.graph.add_crop("output", stream, input_node,
                              final_crop.to_integer(), final_crop.to_integer());
  net.graph.set_output(stream);
  net.graph.add_scalar_param("input.mean", 0.0);
  return net;
}

SkipNet build(const BackboneSpec& spec, const std::vector<SkipSpec>& skips,
              std::int64_t n_cl, std::uint64_t init_seed) {
  NetDescription d = backbone_description(spec);
  d.skips = skips;
  return build(d, n_cl, init_seed);
}

SkipNet upgrade(const SkipNet& net, const SkipSpec& new_skip, double lr_drop) {
  for (const SkipSpec& s : net.desc.skips)
    if (s.tap == new_skip.tap)
      throw InvalidParamError("upgrade: tap '" + new_skip.tap +
                              "' already fused");
  NetDescription d = net.desc;
  d.skips.push_back(new_skip);
  SkipNet up = build(d, net.n_score_channels, /*init_seed=*/0);
  // carry every pre-existing parameter over exactly; the only new params
  // are the zero-initialized skip score layer
  for (const std::string& name : net.graph.param_names()) {
    const Param& src = net.graph.param(name);
    Param& dst = up.graph.param(name);
    if (!(dst.value.dims == src.value.dims))
      throw ShapeError("upgrade: param '" + name + "' changed dims");
    dst.value = src.value;
  }
  up.lr_multiplier = net.lr_multiplier * lr_drop;
  up.input_mean = net.input_mean;
  up.graph.param("input.mean").value.data[0] = net.input_mean;
  return up;
}

void set_input_mean(SkipNet& net, double mean) {
  net.input_mean = mean;
  net.graph.param("input.mean").value.data[0] = mean;
}

std::vector<double> calibrate_stream_scales(
    SkipNet& net, const std::vector<Tensor>& images) {
  if (images.size() < 8)
    throw InvalidParamError("calibration needs at least 8 images");
  const int deep_node = net.graph.node_index(net.deep_tap);
  auto rms_of = [&](int node) {
    double sq = 0.0;
    std::int64_t count = 0;
    for (const Tensor& img : images) {
      Tensor x = img;
      for (double& v : x.data) v -= net.input_mean;
      net.graph.forward(x);
      const Tensor& a = net.graph.node_output(node);
      for (double v : a.data) sq += v * v;
      count += a.numel();
    }
    return std::sqrt(sq / static_cast<double>(count));
  };
  // one pass per node keeps the cache logic trivial; calibration is tiny
  const double deep_rms = rms_of(deep_node);
  if (deep_rms == 0.0)
    throw CalibrationError("calibration: deepest stream is all zero");
  std::vector<double> scales;
  for (const SkipSpec& sk : net.desc.skips) {
    int tap_node = -1;
    for (const TapInfo& t : net.taps)
      if (t.name == sk.tap) tap_node = t.node;
    if (tap_node < 0)
      throw InvalidParamError("calibration: unknown tap '" + sk.tap + "'");
    const double tap_rms = rms_of(tap_node);
    if (tap_rms == 0.0)
      throw CalibrationError("calibration: stream '" + sk.tap +
                             "' is all zero");
    scales.push_back(deep_rms / tap_rms);
  }
  return scales;
}

void apply_stream_scales(SkipNet& net, const std::vector<double>& scales) {
  if (scales.size() != net.desc.skips.size())
    throw InvalidParamError("apply_stream_scales: count mismatch");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    net.desc.skips[i].stream_scale = scales[i];
    const int idx = net.graph.node_index("scale_" + net.desc.skips[i].tap);
    net.graph.node(idx).scale = scales[i];
  }
}

std::vector<ProbeRow> probe_description(const NetDescription& desc) {
  std::vector<ProbeRow> rows;
  std::vector<LayerField> path;
  ComposedField f;
  std::int64_t stride = 1;
  std::vector<std::pair<std::string, std::int64_t>> tap_strides;
  for (const LayerLine& l : desc.layers) {
    if (l.kind == "input") continue;
    path.push_back(line_field(l));
    f = chain(std::span<const LayerField>(path));
    if (l.kind == "conv" || l.kind == "maxpool" || l.kind == "avgpool")
      stride *= l.s;
    if (!l.tap.empty()) {
      rows.push_back({l.tap, f.rf_size, f.eff_stride, f.offset});
      tap_strides.emplace_back(l.tap, stride);
    }
  }
  // the scored coarse output: a 1x1 convolution leaves the field unchanged
  path.push_back(LayerField::conv({1, 1, 0, 1}));
  f = chain(std::span<const LayerField>(path));
  rows.push_back({"score", f.rf_size, f.eff_stride, f.offset});
  // deep path through the upsampling cascade
  std::vector<std::int64_t> junction_strides;
  for (const auto& [name, s] : tap_strides)
    if (s > 1 && s < stride) junction_strides.push_back(s);
  std::sort(junction_strides.rbegin(), junction_strides.rend());
  std::int64_t cur = stride;
  auto add_stage = [&](std::int64_t target) {
    const std::int64_t factor = cur / target;
    path.push_back(LayerField::upsample(factor, upsample_kernel_size(factor)));
    cur = target;
  };
  for (std::int64_t s : junction_strides) add_stage(s);
  add_stage(1);
  f = chain(std::span<const LayerField>(path));
  rows.push_back({"output", f.rf_size, f.eff_stride, f.offset});
  return rows;
}

}  // namespace fcn
