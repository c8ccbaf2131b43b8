#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcn/tensor.hpp"

namespace fcn {

/// One training/evaluation unit: image tensor (1, c, h, w) scaled to
/// [0, 1] plus the integer label map.
struct SegSample {
  Tensor image;
  LabelMap labels;
};

/// Synthetic shapes dataset: background plus disk, square, triangle and
/// ring classes, each drawn with a class-characteristic intensity band.
/// Shapes are drawn back-to-front so overlaps resolve by z-order.
struct ShapesConfig {
  std::int64_t image_size = 32;
  std::int64_t n_classes = 5;  // background + 4 shape classes
  std::int64_t min_shapes = 1;
  std::int64_t max_shapes = 3;
  bool allow_overlap = true;
  double noise_sigma = 0.02;
  std::int64_t min_radius = 5;
  std::int64_t max_radius = 9;
  std::uint64_t seed = 0;
};

enum class MaskMode { kNone, kFgOnly, kBgOnly, kShapeOnly };
MaskMode parse_mask_mode(const std::string& s);
std::string mask_mode_name(MaskMode m);

/// Deterministic for a fixed seed; per-sample seeds derive from
/// (cfg.seed, index).
std::vector<SegSample> generate(const ShapesConfig& cfg, std::int64_t count);

/// fg_only zeroes background pixels, bg_only zeroes foreground pixels,
/// shape_only replaces the image with the binary foreground mask. Labels
/// are never changed.
SegSample apply_mask(const SegSample& s, MaskMode m);

/// Horizontal mirror with probability 1/2 and integer translation uniform
/// in [-jitter, jitter]^2; image zero-fills, labels ignore-fill.
SegSample augment(const SegSample& s, bool mirror, std::int64_t jitter,
                  std::uint64_t seed);

/// A dataset plus the scalar image mean used for input centering.
struct Dataset {
  std::vector<SegSample> samples;
  double mean = 0.0;
};

Dataset make_dataset(std::vector<SegSample> samples);
double image_mean(const std::vector<SegSample>& samples);

// Directory layout: images/NNNN.pgm, labels/NNNN.png, manifest.txt.
void save_dataset(const std::string& dir, const std::vector<SegSample>& set);
std::vector<SegSample> load_dataset_samples(const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace fcn
