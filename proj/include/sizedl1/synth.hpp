#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sizedl1/geometry.hpp"
#include "sizedl1/rng.hpp"
#include "sizedl1/size_buckets.hpp"

namespace sizedl1::synth {

using geometry::BoxCcwh;

constexpr double kMinDim = 1e-6;

/// A generated set of ground-truth boxes standing in for one image.
struct Scene {
  int id = 0;
  std::vector<BoxCcwh> gt;
};

enum class NoiseMode { proportional, absolute };

/// Gaussian jitter applied to ground truth to produce initial predictions.
/// Proportional mode scales each draw by the box's own dimension; absolute
/// mode adds equal-magnitude jitter to every coordinate regardless of box
/// size, which is the regime where a plain L1 loss favors large boxes.
struct NoiseModel {
  double sigma_center = 0.0;  // proportional: fraction of box dim
  double sigma_size = 0.0;    // proportional: fraction of box dim
  NoiseMode mode = NoiseMode::proportional;
  double sigma_abs = 0.0;     // absolute: normalized units
};

/// Mix of COCO size buckets and the pixel-area range drawn within each one.
/// Areas are in virtual pixel^2 for a square image of side image_side, so
/// normalized dimensions satisfy w*h*image_side^2 = area.
struct SizeDistribution {
  std::array<double, 3> mix = {1.0 / 3, 1.0 / 3, 1.0 / 3};  // small/med/large
  double image_side = 640.0;
  std::array<std::pair<double, double>, 3> area_ranges = {
      {{256.0, 1024.0}, {1024.0, 9216.0}, {9216.0, 90000.0}}};
};

inline void validate(const SizeDistribution& dist) {
  double sum = 0.0;
  for (double p : dist.mix) {
    if (!(p >= 0.0)) throw std::invalid_argument("bucket mix must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("bucket mix must sum to 1");
  }
  if (!(dist.image_side > 0.0)) {
    throw std::invalid_argument("image side must be positive");
  }
  const double s2 = dist.image_side * dist.image_side;
  const std::array<std::pair<double, double>, 3> bucket_limits = {
      {{0.0, cocoeval::kSmallMaxArea},
       {cocoeval::kSmallMaxArea, cocoeval::kMediumMaxArea},
       {cocoeval::kMediumMaxArea, s2}}};
  // Sampled areas are inset strictly inside (lo, hi), so a range may start
  // exactly on a bucket edge without ever generating a boundary area.
  for (int b = 0; b < 3; ++b) {
    const auto [lo, hi] = dist.area_ranges[b];
    const auto [blo, bhi] = bucket_limits[b];
    if (!(lo >= blo && lo > 0.0 && hi <= bhi && lo < hi)) {
      throw std::invalid_argument("infeasible bucket range for bucket " +
                                  std::string(cocoeval::bucket_name(
                                      static_cast<cocoeval::SizeBucket>(b))));
    }
    // Largest dimension at the worst aspect ratio must still fit the image.
    if (std::sqrt(hi * 3.0) > dist.image_side) {
      throw std::invalid_argument("bucket range exceeds image extent");
    }
  }
}

/// Draws n_boxes boxes with areas inside the requested bucket ranges and
/// aspect ratios log-uniform in [1/3, 3]. Centers are placed so boxes lie
/// fully inside [0,1]^2; areas are sampled log-uniform with a small inset
/// from the range ends so rounding can never push a box across a bucket
/// boundary. Deterministic per seed.
inline Scene gen_scene(std::uint64_t seed, int n_boxes,
                       const SizeDistribution& dist) {
  if (n_boxes < 1) throw std::invalid_argument("n_boxes must be >= 1");
  validate(dist);
  rng::Rng rng(seed);
  Scene scene;
  scene.id = static_cast<int>(seed & 0x7fffffff);
  scene.gt.reserve(n_boxes);
  const double side2 = dist.image_side * dist.image_side;
  for (int i = 0; i < n_boxes; ++i) {
    const double u = rng.uniform();
    int bucket = 2;
    if (u < dist.mix[0]) {
      bucket = 0;
    } else if (u < dist.mix[0] + dist.mix[1]) {
      bucket = 1;
    }
    const auto [lo, hi] = dist.area_ranges[bucket];
    const double log_lo = std::log(lo) + 1e-6;
    const double log_hi = std::log(hi) - 1e-6;
    const double area_px = std::exp(rng.uniform(log_lo, log_hi));
    const double ratio = std::exp(rng.uniform(std::log(1.0 / 3.0), std::log(3.0)));
    const double area_norm = area_px / side2;
    BoxCcwh box;
    box.w = std::sqrt(area_norm * ratio);
    box.h = std::sqrt(area_norm / ratio);
    box.cx = rng.uniform(0.5 * box.w, 1.0 - 0.5 * box.w);
    box.cy = rng.uniform(0.5 * box.h, 1.0 - 0.5 * box.h);
    scene.gt.push_back(box);
  }
  return scene;
}

/// Jitters each ground-truth box into an initial prediction. One normal draw
/// per coordinate in a fixed order; dimensions are floored at kMinDim to keep
/// outputs valid.
inline std::vector<BoxCcwh> perturb(const Scene& scene, const NoiseModel& noise,
                                    std::uint64_t seed) {
  rng::Rng rng(seed);
  std::vector<BoxCcwh> preds;
  preds.reserve(scene.gt.size());
  for (const auto& g : scene.gt) {
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    const double z3 = rng.normal();
    const double z4 = rng.normal();
    BoxCcwh p = g;
    if (noise.mode == NoiseMode::proportional) {
      p.cx += noise.sigma_center * g.w * z1;
      p.cy += noise.sigma_center * g.h * z2;
      p.w += noise.sigma_size * g.w * z3;
      p.h += noise.sigma_size * g.h * z4;
    } else {
      p.cx += noise.sigma_abs * z1;
      p.cy += noise.sigma_abs * z2;
      p.w += noise.sigma_abs * z3;
      p.h += noise.sigma_abs * z4;
    }
    p.w = std::max(p.w, kMinDim);
    p.h = std::max(p.h, kMinDim);
    preds.push_back(p);
  }
  return preds;
}

/// Line format used for reproducibility archives: scene_id,cx,cy,w,h.
inline std::string format_box_line(int scene_id, const BoxCcwh& b) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g", scene_id, b.cx,
                b.cy, b.w, b.h);
  return buf;
}

inline void write_scenes(std::ostream& out, const std::vector<Scene>& scenes) {
  for (const auto& scene : scenes) {
    for (const auto& b : scene.gt) {
      out << format_box_line(scene.id, b) << '\n';
    }
  }
}

inline void write_scenes(const std::string& path,
                         const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_scenes(out, scenes);
}

inline std::vector<Scene> read_scenes(std::istream& in) {
  std::vector<Scene> scenes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    int id = 0;
    char comma = 0;
    BoxCcwh b;
    if (!(row >> id >> comma >> b.cx >> comma >> b.cy >> comma >> b.w >>
          comma >> b.h)) {
      throw std::runtime_error("bad scene line " + std::to_string(line_no) +
                               ": " + line);
    }
    if (scenes.empty() || scenes.back().id != id) {
      scenes.push_back(Scene{id, {}});
    }
    scenes.back().gt.push_back(b);
  }
  return scenes;
}

inline std::vector<Scene> read_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return read_scenes(in);
}

}  // namespace sizedl1::synth
