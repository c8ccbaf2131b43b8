#include "fcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "fcn/imageio.hpp"
#include "fcn/rng.hpp"

namespace fs = std::filesystem;

namespace fcn {

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "none") return MaskMode::kNone;
  if (s == "fg_only") return MaskMode::kFgOnly;
  if (s == "bg_only") return MaskMode::kBgOnly;
  if (s == "shape_only") return MaskMode::kShapeOnly;
  throw InvalidParamError("unknown mask mode '" + s + "'");
}

std::string mask_mode_name(MaskMode m) {
  switch (m) {
    case MaskMode::kNone: return "none";
    case MaskMode::kFgOnly: return "fg_only";
    case MaskMode::kBgOnly: return "bg_only";
    case MaskMode::kShapeOnly: return "shape_only";
  }
  return "?";
}

namespace {

enum ShapeKind { kDisk = 1, kSquare = 2, kTriangle = 3, kRing = 4 };

struct Shape {
  ShapeKind kind;
  double cx, cy, r;
  double intensity;
};

// class-characteristic intensity bands keep the task learnable from
// scratch; shape alone still separates the classes for masked runs
double base_intensity(ShapeKind k) {
  switch (k) {
    case kDisk: return 0.35;
    case kSquare: return 0.55;
    case kTriangle: return 0.75;
    case kRing: return 0.95;
  }
  return 0.5;
}

bool inside(const Shape& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  switch (s.kind) {
    case kDisk:
      return dx * dx + dy * dy <= s.r * s.r;
    case kSquare:
      return std::abs(dx) <= s.r && std::abs(dy) <= s.r;
    case kTriangle: {
      // isoceles, apex up: vertices (0,-r), (-r,r), (r,r) around the center
      if (dy < -s.r || dy > s.r) return false;
      const double half_width = (dy + s.r) / 2.0;
      return std::abs(dx) <= half_width;
    }
    case kRing: {
      const double d2 = dx * dx + dy * dy;
      const double inner = 0.55 * s.r;
      return d2 <= s.r * s.r && d2 >= inner * inner;
    }
  }
  return false;
}

SegSample render(const ShapesConfig& cfg, std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  const std::int64_t sz = cfg.image_size;
  SegSample s;
  s.image = Tensor({1, 1, sz, sz});
  s.labels = LabelMap(1, sz, sz, 0);

  const std::int64_t count = rng.uniform_int(cfg.min_shapes, cfg.max_shapes);
  std::vector<Shape> shapes;
  int attempts = 0;
  while (static_cast<std::int64_t>(shapes.size()) < count) {
    if (++attempts > 200)
      throw Error("shape generation: cannot place shapes (canvas too small?)");
    Shape sh;
    sh.kind = static_cast<ShapeKind>(rng.uniform_int(1, 4));
    sh.r = static_cast<double>(rng.uniform_int(cfg.min_radius, cfg.max_radius));
    if (2.0 * sh.r + 2.0 > static_cast<double>(sz))
      throw Error("shape generation: shapes cannot fit the canvas");
    sh.cx = rng.uniform(sh.r + 1.0, static_cast<double>(sz) - sh.r - 1.0);
    sh.cy = rng.uniform(sh.r + 1.0, static_cast<double>(sz) - sh.r - 1.0);
    sh.intensity = base_intensity(sh.kind) + rng.uniform(-0.06, 0.06);
    if (!cfg.allow_overlap) {
      bool clash = false;
      for (const Shape& o : shapes) {
        const double dx = o.cx - sh.cx, dy = o.cy - sh.cy;
        if (std::sqrt(dx * dx + dy * dy) < (o.r + sh.r + 1.0)) clash = true;
      }
      if (clash) continue;
    }
    shapes.push_back(sh);
  }

  const double bg = 0.12 + rng.uniform(-0.03, 0.03);
  for (std::int64_t y = 0; y < sz; ++y)
    for (std::int64_t x = 0; x < sz; ++x) {
      double v = bg;
      std::uint8_t label = 0;
      // back-to-front: later shapes overwrite earlier ones
      for (const Shape& sh : shapes)
        if (inside(sh, static_cast<double>(x), static_cast<double>(y))) {
          v = sh.intensity;
          label = static_cast<std::uint8_t>(sh.kind);
        }
      v += rng.normal(0.0, cfg.noise_sigma);
      s.image.at(0, 0, y, x) = std::clamp(v, 0.0, 1.0);
      s.labels.at(0, y, x) = label;
    }
  return s;
}

}  // namespace

std::vector<SegSample> generate(const ShapesConfig& cfg, std::int64_t count) {
  if (cfg.image_size < 4 || cfg.min_shapes < 0 ||
      cfg.max_shapes < cfg.min_shapes || cfg.min_radius < 1 ||
      cfg.max_radius < cfg.min_radius || cfg.noise_sigma < 0.0)
    throw InvalidParamError("generate: bad shapes config");
  if (cfg.n_classes != 5)
    throw InvalidParamError("generate: the shapes set defines 5 classes");
  std::vector<SegSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i)
    out.push_back(render(cfg, derive_seed(cfg.seed, kSeedData,
                                          static_cast<std::uint64_t>(i))));
  return out;
}

SegSample apply_mask(const SegSample& s, MaskMode m) {
  if (m == MaskMode::kNone) return s;
  SegSample out;
  out.labels = s.labels;  // masking never touches labels
  out.image = Tensor(s.image.dims);
  for (std::int64_t c = 0; c < s.image.dims.c; ++c)
    for (std::int64_t y = 0; y < s.image.dims.h; ++y)
      for (std::int64_t x = 0; x < s.image.dims.w; ++x) {
        const bool fg = s.labels.at(0, y, x) != 0 &&
                        s.labels.at(0, y, x) != kIgnoreLabel;
        double v = s.image.at(0, c, y, x);
        switch (m) {
          case MaskMode::kFgOnly: v = fg ? v : 0.0; break;
          case MaskMode::kBgOnly: v = fg ? 0.0 : v; break;
          case MaskMode::kShapeOnly: v = fg ? 1.0 : 0.0; break;
          case MaskMode::kNone: break;
        }
        out.image.at(0, c, y, x) = v;
      }
  return out;
}

SegSample augment(const SegSample& s, bool mirror, std::int64_t jitter,
                  std::uint64_t seed) {
  if (jitter < 0) throw InvalidParamError("augment: jitter must be >= 0");
  Rng rng(derive_seed(seed, kSeedAugment));
  std::int64_t dx = 0, dy = 0;
  if (jitter > 0) {
    dx = rng.uniform_int(-jitter, jitter);
    dy = rng.uniform_int(-jitter, jitter);
  }
  SegSample out;
  out.image = Tensor(s.image.dims);
  out.labels = LabelMap(s.labels.n, s.labels.h, s.labels.w, kIgnoreLabel);
  const std::int64_t h = s.image.dims.h, w = s.image.dims.w;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      std::int64_t sx = x - dx;
      const std::int64_t sy = y - dy;
      if (mirror && sx >= 0 && sx < w) sx = w - 1 - sx;
      if (sx < 0 || sx >= w || sy < 0 || sy >= h) continue;  // zero/ignore fill
      for (std::int64_t c = 0; c < s.image.dims.c; ++c)
        out.image.at(0, c, y, x) = s.image.at(0, c, sy, sx);
      out.labels.at(0, y, x) = s.labels.at(0, sy, sx);
    }
  return out;
}

double image_mean(const std::vector<SegSample>& samples) {
  double sum = 0.0;
  std::int64_t count = 0;
  for (const SegSample& s : samples) {
    for (double v : s.image.data) sum += v;
    count += s.image.numel();
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

Dataset make_dataset(std::vector<SegSample> samples) {
  Dataset d;
  d.samples = std::move(samples);
  d.mean = image_mean(d.samples);
  return d;
}

void save_dataset(const std::string& dir, const std::vector<SegSample>& set) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw IoError("cannot write manifest in '" + dir + "'");
  char name[16];
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::snprintf(name, sizeof name, "%04zu", i);
    const Tensor& img = set[i].image;
    save_image((fs::path(dir) / "images" / (std::string(name) + ".pgm"))
                   .string(),
               tensor_to_image(img));
    save_image((fs::path(dir) / "labels" / (std::string(name) + ".png"))
                   .string(),
               labels_to_image(set[i].labels));
    manifest << name << "\n";
  }
}

std::vector<SegSample> load_dataset_samples(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest)
    throw IoError("cannot read manifest in '" + dir + "'");
  std::vector<SegSample> out;
  std::string id;
  while (manifest >> id) {
    SegSample s;
    const fs::path pgm = fs::path(dir) / "images" / (id + ".pgm");
    const fs::path png = fs::path(dir) / "images" / (id + ".png");
    s.image = image_to_tensor(load_image(
        fs::exists(pgm) ? pgm.string() : png.string()));
    s.labels = image_to_labels(load_image(
        (fs::path(dir) / "labels" / (id + ".png")).string()));
    if (s.labels.h != s.image.dims.h || s.labels.w != s.image.dims.w)
      throw ShapeError("dataset sample '" + id + "': image/label size differ");
    out.push_back(std::move(s));
  }
  return out;
}

Dataset load_dataset(const std::string& dir) {
  return make_dataset(load_dataset_samples(dir));
}

}  // namespace fcn
