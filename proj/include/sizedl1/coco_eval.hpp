#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sizedl1/size_buckets.hpp"

namespace sizedl1::cocoeval {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Ground-truth annotation, pixel-space xywh box.
struct GtAnnotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  std::array<double, 4> bbox{};  // x, y, w, h
  double area = 0.0;
  bool iscrowd = false;
};

/// One detection in the standard COCO results form.
struct DetectionRecord {
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  std::array<double, 4> bbox{};
  double score = 0.0;
};

struct GtCollection {
  std::vector<std::int64_t> image_ids;     // sorted, unique
  std::vector<std::int64_t> category_ids;  // sorted, unique
  std::vector<GtAnnotation> annotations;
};

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& obj,
                                         const char* key,
                                         const std::string& context) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw ParseError(context + ": missing required key '" + key + "'");
  }
  return *it;
}

inline std::int64_t require_int(const nlohmann::json& obj, const char* key,
                                const std::string& context) {
  const auto& v = require_key(obj, key, context);
  if (!v.is_number_integer()) {
    throw ParseError(context + ": key '" + key + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

inline std::array<double, 4> require_bbox(const nlohmann::json& obj,
                                          const std::string& context) {
  const auto& v = require_key(obj, "bbox", context);
  if (!v.is_array() || v.size() != 4) {
    throw ParseError(context + ": 'bbox' must be an array of 4 numbers");
  }
  std::array<double, 4> bbox{};
  for (int i = 0; i < 4; ++i) {
    if (!v[i].is_number()) {
      throw ParseError(context + ": 'bbox' must contain only numbers");
    }
    bbox[i] = v[i].get<double>();
    if (!std::isfinite(bbox[i])) {
      throw ParseError(context + ": 'bbox' has a non-finite entry");
    }
  }
  return bbox;
}

inline nlohmann::json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ParseError("malformed JSON in " + path);
  return doc;
}

}  // namespace detail

/// Loads the COCO annotation subset (images, annotations, categories).
/// Unknown fields are ignored; missing required keys and dangling ids are
/// reported with context.
inline GtCollection load_gt(const std::string& path) {
  const auto doc = detail::parse_file(path);
  if (!doc.is_object()) throw ParseError(path + ": expected a JSON object");

  GtCollection out;
  const auto& images = detail::require_key(doc, "images", path);
  if (!images.is_array()) throw ParseError(path + ": 'images' must be an array");
  std::set<std::int64_t> image_set;
  for (const auto& img : images) {
    image_set.insert(detail::require_int(img, "id", path + ": image"));
  }
  const auto& cats = detail::require_key(doc, "categories", path);
  if (!cats.is_array()) {
    throw ParseError(path + ": 'categories' must be an array");
  }
  std::set<std::int64_t> cat_set;
  for (const auto& cat : cats) {
    cat_set.insert(detail::require_int(cat, "id", path + ": category"));
  }

  const auto& anns = detail::require_key(doc, "annotations", path);
  if (!anns.is_array()) {
    throw ParseError(path + ": 'annotations' must be an array");
  }
  for (const auto& ann : anns) {
    const std::string ctx = path + ": annotation";
    GtAnnotation gt;
    gt.id = detail::require_int(ann, "id", ctx);
    gt.image_id = detail::require_int(ann, "image_id", ctx);
    gt.category_id = detail::require_int(ann, "category_id", ctx);
    gt.bbox = detail::require_bbox(ann, ctx);
    if (!image_set.count(gt.image_id)) {
      throw ParseError(ctx + " " + std::to_string(gt.id) +
                       ": unknown image id " + std::to_string(gt.image_id));
    }
    if (!cat_set.count(gt.category_id)) {
      throw ParseError(ctx + " " + std::to_string(gt.id) +
                       ": unknown category id " +
                       std::to_string(gt.category_id));
    }
    if (ann.contains("area")) {
      if (!ann["area"].is_number()) {
        throw ParseError(ctx + ": 'area' must be a number");
      }
      gt.area = ann["area"].get<double>();
    } else {
      gt.area = gt.bbox[2] * gt.bbox[3];
    }
    if (!(gt.area > 0.0) || !std::isfinite(gt.area)) {
      throw ParseError(ctx + " " + std::to_string(gt.id) +
                       ": area must be positive and finite");
    }
    if (ann.contains("iscrowd")) {
      const auto& crowd = ann["iscrowd"];
      if (crowd.is_boolean()) {
        gt.iscrowd = crowd.get<bool>();
      } else if (crowd.is_number_integer()) {
        gt.iscrowd = crowd.get<std::int64_t>() != 0;
      } else {
        throw ParseError(ctx + ": 'iscrowd' must be 0/1 or boolean");
      }
    }
    out.annotations.push_back(gt);
  }
  out.image_ids.assign(image_set.begin(), image_set.end());
  out.category_ids.assign(cat_set.begin(), cat_set.end());
  return out;
}

/// Loads a COCO results array and validates ids against the ground truth.
inline std::vector<DetectionRecord> load_dets(const std::string& path,
                                              const GtCollection& gt) {
  const auto doc = detail::parse_file(path);
  if (!doc.is_array()) {
    throw ParseError(path + ": expected a JSON array of detections");
  }
  const std::set<std::int64_t> image_set(gt.image_ids.begin(),
                                         gt.image_ids.end());
  const std::set<std::int64_t> cat_set(gt.category_ids.begin(),
                                       gt.category_ids.end());
  std::vector<DetectionRecord> dets;
  dets.reserve(doc.size());
  for (const auto& item : doc) {
    const std::string ctx = path + ": detection";
    DetectionRecord det;
    det.image_id = detail::require_int(item, "image_id", ctx);
    det.category_id = detail::require_int(item, "category_id", ctx);
    det.bbox = detail::require_bbox(item, ctx);
    const auto& score = detail::require_key(item, "score", ctx);
    if (!score.is_number()) throw ParseError(ctx + ": 'score' must be a number");
    det.score = score.get<double>();
    if (!std::isfinite(det.score) || det.score < 0.0 || det.score > 1.0) {
      throw ParseError(ctx + ": score must lie in [0, 1]");
    }
    if (!image_set.count(det.image_id)) {
      throw ParseError(ctx + ": unknown image id " +
                       std::to_string(det.image_id));
    }
    if (!cat_set.count(det.category_id)) {
      throw ParseError(ctx + ": unknown category id " +
                       std::to_string(det.category_id));
    }
    dets.push_back(det);
  }
  return dets;
}

namespace detail {

inline constexpr int kMaxDets = 100;

/// IoU in pixel xywh space. Crowd ground truth uses intersection over the
/// detection's own area, matching the COCO convention for regions a
/// detection may freely overlap.
inline double eval_iou(const std::array<double, 4>& det,
                       const std::array<double, 4>& gt, bool crowd) {
  const double ix1 = std::max(det[0], gt[0]);
  const double iy1 = std::max(det[1], gt[1]);
  const double ix2 = std::min(det[0] + det[2], gt[0] + gt[2]);
  const double iy2 = std::min(det[1] + det[3], gt[1] + gt[3]);
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double det_area = det[2] * det[3];
  const double gt_area = gt[2] * gt[3];
  const double denom = crowd ? det_area : det_area + gt_area - inter;
  if (denom <= 0.0) return 0.0;
  return inter / denom;
}

struct FlaggedDet {
  const DetectionRecord* det = nullptr;
  bool matched = false;
  bool ignored = false;
};

/// Score-descending greedy matching for one image, COCO rules: each
/// detection takes the best-IoU available ground truth at or above the
/// threshold, preferring non-ignored ones; detections matched to ignored
/// ground truth, and unmatched detections whose own area lies outside the
/// bucket, are excluded from both TP and FP accounting.
inline void match_image(std::vector<FlaggedDet>& dets,
                        std::span<const GtAnnotation* const> gts,
                        double threshold, SizeBucket bucket) {
  // Non-ignored ground truth first, original order preserved within groups.
  std::vector<const GtAnnotation*> ordered(gts.begin(), gts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [&](const GtAnnotation* a, const GtAnnotation* b) {
                     const bool ia = a->iscrowd || !in_bucket(bucket, a->area);
                     const bool ib = b->iscrowd || !in_bucket(bucket, b->area);
                     return ia < ib;
                   });
  std::vector<bool> taken(ordered.size(), false);
  for (auto& fd : dets) {
    double best_iou = std::min(threshold, 1.0 - 1e-10);
    int best = -1;
    bool best_ignored = false;
    for (std::size_t g = 0; g < ordered.size(); ++g) {
      const bool g_ignored =
          ordered[g]->iscrowd || !in_bucket(bucket, ordered[g]->area);
      if (taken[g] && !ordered[g]->iscrowd) continue;
      if (best >= 0 && !best_ignored && g_ignored) break;
      const double v = eval_iou(fd.det->bbox, ordered[g]->bbox,
                                ordered[g]->iscrowd);
      if (v < best_iou) continue;
      best_iou = v;
      best = static_cast<int>(g);
      best_ignored = g_ignored;
    }
    if (best >= 0) {
      taken[best] = true;
      fd.matched = true;
      fd.ignored = best_ignored;
    } else {
      const double det_area = fd.det->bbox[2] * fd.det->bbox[3];
      fd.ignored = !in_bucket(bucket, det_area);
    }
  }
}

}  // namespace detail

/// Average precision for a single-category subset at one IoU threshold,
/// restricted to a size bucket: 101-point interpolated AP over the pooled
/// score-ranked detections. Returns nullopt when the bucket holds no
/// countable ground truth (AP undefined, not zero).
inline std::optional<double> ap(std::span<const DetectionRecord> dets,
                                std::span<const GtAnnotation> gts,
                                double iou_threshold, SizeBucket bucket) {
  // Group by image, keeping ascending image-id order for determinism.
  std::map<std::int64_t, std::vector<const GtAnnotation*>> gt_by_image;
  for (const auto& g : gts) gt_by_image[g.image_id].push_back(&g);
  std::map<std::int64_t, std::vector<detail::FlaggedDet>> det_by_image;
  for (const auto& d : dets) det_by_image[d.image_id].push_back({&d});

  long npig = 0;
  for (const auto& g : gts) {
    if (!g.iscrowd && in_bucket(bucket, g.area)) ++npig;
  }
  if (npig == 0) return std::nullopt;

  static const std::vector<const GtAnnotation*> kNoGts;
  for (auto& [image_id, flagged] : det_by_image) {
    std::stable_sort(flagged.begin(), flagged.end(),
                     [](const detail::FlaggedDet& a, const detail::FlaggedDet& b) {
                       return a.det->score > b.det->score;
                     });
    if (flagged.size() > detail::kMaxDets) flagged.resize(detail::kMaxDets);
    const auto it = gt_by_image.find(image_id);
    const auto& img_gts = it == gt_by_image.end() ? kNoGts : it->second;
    detail::match_image(flagged, img_gts, iou_threshold, bucket);
  }

  // Pool across images and rank by score (stable, so image order breaks ties).
  std::vector<const detail::FlaggedDet*> pooled;
  for (const auto& [image_id, flagged] : det_by_image) {
    for (const auto& fd : flagged) pooled.push_back(&fd);
  }
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const detail::FlaggedDet* a, const detail::FlaggedDet* b) {
                     return a->det->score > b->det->score;
                   });

  std::vector<double> precision;
  std::vector<double> recall;
  long tp = 0;
  long fp = 0;
  for (const auto* fd : pooled) {
    if (fd->ignored) continue;
    if (fd->matched) {
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(npig));
  }

  // Precision envelope, then sample at the 101 standard recall levels.
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = static_cast<double>(r) / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) {
      sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
  }
  return sum / 101.0;
}

struct MapTable {
  std::optional<double> map_s;
  std::optional<double> map_m;
  std::optional<double> map_l;
  std::optional<double> map;
};

inline std::vector<double> default_iou_thresholds() {
  std::vector<double> thresholds;
  for (int t = 0; t < 10; ++t) thresholds.push_back(0.5 + 0.05 * t);
  return thresholds;
}

/// COCO-style table: mean over categories (those with ground truth in the
/// bucket) and over the 10 IoU thresholds 0.50:0.05:0.95.
inline MapTable map_by_size(std::span<const DetectionRecord> dets,
                            const GtCollection& gt) {
  const auto thresholds = default_iou_thresholds();
  const std::array<SizeBucket, 4> buckets = {SizeBucket::small,
                                             SizeBucket::medium,
                                             SizeBucket::large, SizeBucket::all};
  std::array<double, 4> sums{};
  std::array<int, 4> cats{};
  for (const std::int64_t cat : gt.category_ids) {
    std::vector<GtAnnotation> cat_gts;
    for (const auto& g : gt.annotations) {
      if (g.category_id == cat) cat_gts.push_back(g);
    }
    std::vector<DetectionRecord> cat_dets;
    for (const auto& d : dets) {
      if (d.category_id == cat) cat_dets.push_back(d);
    }
    for (int b = 0; b < 4; ++b) {
      double thr_sum = 0.0;
      bool defined = true;
      for (const double thr : thresholds) {
        const auto value = ap(cat_dets, cat_gts, thr, buckets[b]);
        if (!value) {
          defined = false;
          break;
        }
        thr_sum += *value;
      }
      if (defined) {
        sums[b] += thr_sum / static_cast<double>(thresholds.size());
        cats[b] += 1;
      }
    }
  }
  MapTable table;
  auto cell = [&](int b) -> std::optional<double> {
    if (cats[b] == 0) return std::nullopt;
    return sums[b] / static_cast<double>(cats[b]);
  };
  table.map_s = cell(0);
  table.map_m = cell(1);
  table.map_l = cell(2);
  table.map = cell(3);
  return table;
}

inline std::string format_cell(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

/// Aligned four-column table in the usual reporting order.
inline std::string format_table(const MapTable& t) {
  std::ostringstream out;
  auto pad = [](const std::string& s) {
    std::string cell = s;
    while (cell.size() < 8) cell = " " + cell;
    return cell;
  };
  out << pad("mAP_s") << pad("mAP_m") << pad("mAP_l") << pad("mAP") << "\n";
  out << pad(format_cell(t.map_s)) << pad(format_cell(t.map_m))
      << pad(format_cell(t.map_l)) << pad(format_cell(t.map)) << "\n";
  return out.str();
}

inline void write_csv(std::ostream& out, const MapTable& t) {
  auto cell = [](const std::optional<double>& v) -> std::string {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *v);
    return buf;
  };
  out << "mAP_s,mAP_m,mAP_l,mAP\n";
  out << cell(t.map_s) << "," << cell(t.map_m) << "," << cell(t.map_l) << ","
      << cell(t.map) << "\n";
}

inline void write_csv(const std::string& path, const MapTable& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_csv(out, t);
}

}  // namespace sizedl1::cocoeval
