#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "sizedl1/geometry.hpp"

namespace sizedl1::losses {

using geometry::BoxCcwh;

enum class Compensation { none, batch_mean };
enum class LossVariant { plain_l1, sized_l1 };

/// Normalization behavior of the sized L1 loss.
struct SizedConfig {
  /// Floor applied to ground-truth dimensions before taking reciprocals.
  /// Keeps weights bounded for near-degenerate boxes.
  double epsilon = 1e-6;
  Compensation compensation = Compensation::none;
};

/// Relative weights of the two regression terms. Values are configuration
/// inputs; common DETR-style setups weight the L1 term higher.
struct LossWeights {
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;
};

/// Per-box weights for the (cx, cy, w, h) coordinates.
using CoordWeights = std::array<double, 4>;

/// Per-box loss gradient with respect to the predicted (cx, cy, w, h).
using Grad4 = std::array<double, 4>;

inline std::array<double, 4> as_array(const BoxCcwh& b) {
  return {b.cx, b.cy, b.w, b.h};
}

/// Weighted L1 over matched pairs: sum_{i,j} w[i][j] * |pred[i][j] - gt[i][j]|.
/// With all weights 1 this is the plain L1 regression loss.
inline double l1_loss(std::span<const BoxCcwh> pred, std::span<const BoxCcwh> gt,
                      std::span<const CoordWeights> weights) {
  if (pred.size() != gt.size() || pred.size() != weights.size()) {
    throw std::invalid_argument("l1_loss: pred, gt and weights lengths differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = as_array(pred[i]);
    const auto g = as_array(gt[i]);
    for (int j = 0; j < 4; ++j) {
      total += weights[i][j] * std::abs(p[j] - g[j]);
    }
  }
  return total;
}

inline double l1_loss_unit(std::span<const BoxCcwh> pred,
                           std::span<const BoxCcwh> gt) {
  const std::vector<CoordWeights> unit(pred.size(),
                                       CoordWeights{1.0, 1.0, 1.0, 1.0});
  return l1_loss(pred, gt, unit);
}

/// Normalization weights derived from the ground-truth boxes. The {cx, w}
/// coordinates of box i are weighted by 1/max(w_i, eps) and {cy, h} by
/// 1/max(h_i, eps), so every box contributes as if rescaled to unit width
/// and height. With batch_mean compensation the width-group weights are
/// additionally multiplied by the batch mean of the ground-truth widths
/// (heights likewise), restoring the overall magnitude of the plain loss.
inline std::vector<CoordWeights> sized_weights(std::span<const BoxCcwh> gt,
                                               const SizedConfig& cfg) {
  std::vector<CoordWeights> weights;
  weights.reserve(gt.size());
  double comp_w = 1.0;
  double comp_h = 1.0;
  if (cfg.compensation == Compensation::batch_mean && !gt.empty()) {
    double sum_w = 0.0;
    double sum_h = 0.0;
    for (const auto& g : gt) {
      sum_w += g.w;
      sum_h += g.h;
    }
    comp_w = sum_w / static_cast<double>(gt.size());
    comp_h = sum_h / static_cast<double>(gt.size());
  }
  for (const auto& g : gt) {
    const double ww = comp_w / std::max(g.w, cfg.epsilon);
    const double wh = comp_h / std::max(g.h, cfg.epsilon);
    weights.push_back({ww, wh, ww, wh});
  }
  return weights;
}

/// L1 loss under the per-dimension normalization weights. Invariant under
/// joint rescaling of predictions and ground truths (compensation none);
/// scales linearly with the batch under batch_mean compensation.
inline double sized_l1_loss(std::span<const BoxCcwh> pred,
                            std::span<const BoxCcwh> gt,
                            const SizedConfig& cfg) {
  const auto weights = sized_weights(gt, cfg);
  return l1_loss(pred, gt, weights);
}

/// 1 - GIoU(pred, gt), in [0, 2).
inline double giou_loss(const BoxCcwh& pred, const BoxCcwh& gt) {
  return 1.0 - geometry::giou(pred, gt);
}

/// Regression loss of a matched batch: lambda_l1 * L1-variant +
/// lambda_giou * sum of per-pair GIoU losses. The variant flag switches the
/// L1 term between the plain and sized forms; everything else is shared.
inline double composite_reg_loss(std::span<const BoxCcwh> pred,
                                 std::span<const BoxCcwh> gt,
                                 LossVariant variant, const SizedConfig& cfg,
                                 const LossWeights& lw) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("composite_reg_loss: pred/gt lengths differ");
  }
  const double l1 = (variant == LossVariant::sized_l1)
                        ? sized_l1_loss(pred, gt, cfg)
                        : l1_loss_unit(pred, gt);
  double giou_sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    giou_sum += giou_loss(pred[i], gt[i]);
  }
  return lw.lambda_l1 * l1 + lw.lambda_giou * giou_sum;
}

inline double sign_of(double x) {
  if (x > 0.0) return 1.0;
  if (x < 0.0) return -1.0;
  return 0.0;  // subgradient at ties
}

/// Gradient of the weighted L1 with respect to each predicted box.
/// Weights are constants of the ground truth, so each slot is
/// w[i][j] * sign(pred[i][j] - gt[i][j]).
inline std::vector<Grad4> grad_l1(std::span<const BoxCcwh> pred,
                                  std::span<const BoxCcwh> gt,
                                  std::span<const CoordWeights> weights) {
  if (pred.size() != gt.size() || pred.size() != weights.size()) {
    throw std::invalid_argument("grad_l1: pred, gt and weights lengths differ");
  }
  std::vector<Grad4> grads(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = as_array(pred[i]);
    const auto g = as_array(gt[i]);
    for (int j = 0; j < 4; ++j) {
      grads[i][j] = weights[i][j] * sign_of(p[j] - g[j]);
    }
  }
  return grads;
}

inline std::vector<Grad4> grad_sized_l1(std::span<const BoxCcwh> pred,
                                        std::span<const BoxCcwh> gt,
                                        const SizedConfig& cfg) {
  const auto weights = sized_weights(gt, cfg);
  return grad_l1(pred, gt, weights);
}

/// Gradient of giou_loss with respect to the predicted (cx, cy, w, h).
/// Derived in corner space and chained back to the center parameterization;
/// min/max switches use one-sided subgradients, which matters only on
/// measure-zero tie configurations.
inline Grad4 grad_giou_loss(const BoxCcwh& pred, const BoxCcwh& gt) {
  const auto a = geometry::ccwh_to_xyxy(pred);
  const auto b = geometry::ccwh_to_xyxy(gt);

  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;

  const double area_a = geometry::area(a);
  const double uni = area_a + geometry::area(b) - inter;

  const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double cbox = cw * ch;

  // Partials of intersection width/height w.r.t. the pred corners.
  const double diw_dax1 = (a.x1 > b.x1) ? -1.0 : 0.0;
  const double diw_dax2 = (a.x2 < b.x2) ? 1.0 : 0.0;
  const double dih_day1 = (a.y1 > b.y1) ? -1.0 : 0.0;
  const double dih_day2 = (a.y2 < b.y2) ? 1.0 : 0.0;

  // Partials of the enclosing-box width/height.
  const double dcw_dax1 = (a.x1 < b.x1) ? -1.0 : 0.0;
  const double dcw_dax2 = (a.x2 > b.x2) ? 1.0 : 0.0;
  const double dch_day1 = (a.y1 < b.y1) ? -1.0 : 0.0;
  const double dch_day2 = (a.y2 > b.y2) ? 1.0 : 0.0;

  const double aw = a.x2 - a.x1;
  const double ah = a.y2 - a.y1;

  // Corner order: (x1, y1, x2, y2).
  std::array<double, 4> d_inter{};
  std::array<double, 4> d_area{-ah, -aw, ah, aw};
  std::array<double, 4> d_c{dcw_dax1 * ch, dch_day1 * cw, dcw_dax2 * ch,
                            dch_day2 * cw};
  if (overlap) {
    d_inter = {diw_dax1 * ih, dih_day1 * iw, diw_dax2 * ih, dih_day2 * iw};
  }

  Grad4 corner_grad{};
  for (int k = 0; k < 4; ++k) {
    const double d_uni = d_area[k] - d_inter[k];
    const double d_iou = (d_inter[k] * uni - inter * d_uni) / (uni * uni);
    // penalty (C - U)/C = 1 - U/C
    const double d_pen = -(d_uni * cbox - uni * d_c[k]) / (cbox * cbox);
    corner_grad[k] = -(d_iou - d_pen);  // loss = 1 - giou
  }

  // Chain rule back to (cx, cy, w, h): x1 = cx - w/2, x2 = cx + w/2, etc.
  return {corner_grad[0] + corner_grad[2], corner_grad[1] + corner_grad[3],
          0.5 * (corner_grad[2] - corner_grad[0]),
          0.5 * (corner_grad[3] - corner_grad[1])};
}

/// Per-box gradient of composite_reg_loss with respect to each prediction.
inline std::vector<Grad4> grad_composite_reg_loss(
    std::span<const BoxCcwh> pred, std::span<const BoxCcwh> gt,
    LossVariant variant, const SizedConfig& cfg, const LossWeights& lw) {
  std::vector<Grad4> l1_grads;
  if (variant == LossVariant::sized_l1) {
    l1_grads = grad_sized_l1(pred, gt, cfg);
  } else {
    const std::vector<CoordWeights> unit(pred.size(),
                                         CoordWeights{1.0, 1.0, 1.0, 1.0});
    l1_grads = grad_l1(pred, gt, unit);
  }
  std::vector<Grad4> grads(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Grad4 gg = grad_giou_loss(pred[i], gt[i]);
    for (int j = 0; j < 4; ++j) {
      grads[i][j] = lw.lambda_l1 * l1_grads[i][j] + lw.lambda_giou * gg[j];
    }
  }
  return grads;
}

}  // namespace sizedl1::losses
