#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcn/field.hpp"
#include "fcn/graph.hpp"

namespace fcn {

/// One line of a net description file:
///   name kind k s pad dilation channels [tap]
/// kinds: input, conv, relu, maxpool, avgpool, dropout (k = rate percent).
struct LayerLine {
  std::string name;
  std::string kind;
  std::int64_t k = 1, s = 1, pad = 0, dilation = 1, channels = 1;
  std::string tap;  // non-empty marks a named skip tap
};

/// Skip line: `skip <tap> <scale> <factor>`. The stream is scored by a
/// zero-initialized 1x1 convolution and summed into the cascade at the
/// tap's grid; factor is the upsampling that joins the coarser stream.
struct SkipSpec {
  std::string tap;
  double stream_scale = 1.0;
  std::int64_t factor = 2;
};

struct NetDescription {
  std::vector<LayerLine> layers;
  std::vector<SkipSpec> skips;
};

NetDescription parse_net_text(const std::string& text);
NetDescription parse_net_file(const std::string& path);
std::string format_net(const NetDescription& desc);

/// Desk-scale backbone family: per stage, conv count / channels / pool.
struct StageSpec {
  std::int64_t convs = 2;
  std::int64_t channels = 16;
  bool pool = true;
};

struct BackboneSpec {
  std::int64_t in_channels = 1;
  std::vector<StageSpec> stages;
  std::int64_t truncate_after_stage = -1;  // >=0 builds a truncated baseline
};

/// Conv(3x3, s1, pad1) stages with 2x2/s2 max pools; every pool below the
/// deepest is a named tap (pool1, pool2, ...).
NetDescription backbone_description(const BackboneSpec& spec);

struct TapInfo {
  std::string name;
  int node = -1;
  std::int64_t stride = 1;
  std::int64_t channels = 0;
  ComposedField field;
};

/// A built segmentation net. The upsampling path is factorized into one
/// x2 stage per declared tap grid (learnable, bilinear-initialized) with a
/// fixed bilinear final stage, so upgrading with a zero-initialized skip
/// is a bitwise no-op on the output.
struct SkipNet {
  NetDescription desc;
  Graph graph;
  std::int64_t n_score_channels = 0;
  std::int64_t total_stride = 1;
  std::vector<TapInfo> taps;
  std::string deep_tap;          // backbone output feeding the main score
  double lr_multiplier = 1.0;    // product of stage drops
  double input_mean = 0.0;       // persisted as param "input.mean"
};

SkipNet build(const NetDescription& desc, std::int64_t n_score_channels,
              std::uint64_t init_seed);
SkipNet build(const BackboneSpec& spec, const std::vector<SkipSpec>& skips,
              std::int64_t n_cl, std::uint64_t init_seed);

/// New net with the extra skip; parameters carry over exactly by name and
/// the new score layer is zero-initialized. lr_drop multiplies into
/// lr_multiplier for the optimizer schedule.
SkipNet upgrade(const SkipNet& net, const SkipSpec& new_skip, double lr_drop);

void set_input_mean(SkipNet& net, double mean);

/// Per-skip stream scales: RMS of the deepest tap's activations divided by
/// the RMS of each skip tap's activations, over >= 8 calibration images.
std::vector<double> calibrate_stream_scales(SkipNet& net,
                                            const std::vector<Tensor>& images);
void apply_stream_scales(SkipNet& net, const std::vector<double>& scales);

struct ProbeRow {
  std::string name;
  Rational rf_size{1};
  Rational eff_stride{1};
  Rational offset{0};
};

/// Field-calculus report per named endpoint: every tap, the scored coarse
/// output, and the upsampled final output (deep path).
std::vector<ProbeRow> probe_description(const NetDescription& desc);

}  // namespace fcn
