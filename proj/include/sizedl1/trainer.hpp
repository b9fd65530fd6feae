#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sizedl1/losses.hpp"
#include "sizedl1/matching.hpp"
#include "sizedl1/size_buckets.hpp"

namespace sizedl1::trainer {

using geometry::BoxCcwh;

constexpr double kDimFloor = 1e-6;

/// 4x5 weight matrix over the rows (cx, cy, w, h) and feature columns
/// (1, cx, cy, w, h) of the initial box.
using Weights = std::array<std::array<double, 5>, 4>;

inline std::array<double, 5> features(const BoxCcwh& b) {
  return {1.0, b.cx, b.cy, b.w, b.h};
}

/// Linear box-refinement head: pred = b_init + W * phi(b_init), with the
/// output dimensions floored at kDimFloor so predictions stay valid boxes.
struct RefinementModel {
  Weights W{};

  BoxCcwh refine(const BoxCcwh& init) const {
    const auto phi = features(init);
    std::array<double, 4> out = {init.cx, init.cy, init.w, init.h};
    for (int c = 0; c < 4; ++c) {
      for (int f = 0; f < 5; ++f) out[c] += W[c][f] * phi[f];
    }
    return {out[0], out[1], std::max(out[2], kDimFloor),
            std::max(out[3], kDimFloor)};
  }
};

inline bool same_weights(const RefinementModel& a, const RefinementModel& b) {
  for (int c = 0; c < 4; ++c) {
    for (int f = 0; f < 5; ++f) {
      if (a.W[c][f] != b.W[c][f]) return false;
    }
  }
  return true;
}

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 100;
  int batch_size = 16;  // scenes per gradient step
  losses::LossVariant loss_variant = losses::LossVariant::plain_l1;
  losses::SizedConfig sized{};
  losses::LossWeights loss_weights{};
  bool match_with_sized = false;
  std::uint64_t seed = 0;
};

enum class BranchMode { both, supervised_only };

struct SemiConfig {
  TrainConfig train{};
  double ema_momentum = 0.999;
  BranchMode branch_mode = BranchMode::both;
  double unsup_weight = 1.0;
};

/// One labeled training example: initial predictions plus ground truth.
struct LabeledScene {
  std::vector<BoxCcwh> init;
  std::vector<BoxCcwh> gt;
};

/// Two views of the same unlabeled scene: a weakly jittered view for the
/// teacher and a strongly jittered view for the student.
struct UnlabeledScene {
  std::vector<BoxCcwh> weak;
  std::vector<BoxCcwh> strong;
};

struct BucketStats {
  double mean_rel_err = std::nan("");
  double mean_iou = std::nan("");
  long count = 0;
};

/// Per-epoch localization quality, bucketed by ground-truth pixel area.
/// Index order: small, medium, large, all.
struct EpochStats {
  std::array<BucketStats, 4> buckets{};
};

struct ErrorTrace {
  std::vector<EpochStats> epochs;
};

namespace detail {

struct BranchEval {
  double loss = 0.0;
  Weights grad{};
  long pairs = 0;
};

/// Mean matched composite loss over a scene batch and its gradient w.r.t. W.
/// Matching is recomputed from the current predictions; the cost uses the
/// training variant only when match_with_sized is set, mirroring the choice
/// of applying the normalization inside the assignment or only in the loss.
inline BranchEval branch_gradient(const RefinementModel& model,
                                  std::span<const LabeledScene> scenes,
                                  losses::LossVariant variant,
                                  const losses::SizedConfig& sized,
                                  const losses::LossWeights& lw,
                                  bool match_with_sized) {
  BranchEval eval;
  std::vector<BoxCcwh> matched_pred;
  std::vector<BoxCcwh> matched_gt;
  std::vector<std::array<double, 5>> matched_phi;
  std::vector<std::array<bool, 4>> matched_live;  // false where clipped

  const losses::LossVariant match_variant =
      match_with_sized ? variant : losses::LossVariant::plain_l1;

  for (const auto& scene : scenes) {
    if (scene.init.empty() || scene.gt.empty()) continue;
    std::vector<BoxCcwh> preds;
    std::vector<std::array<bool, 4>> live;
    preds.reserve(scene.init.size());
    for (const auto& init : scene.init) {
      const auto phi = features(init);
      std::array<double, 4> raw = {init.cx, init.cy, init.w, init.h};
      for (int c = 0; c < 4; ++c) {
        for (int f = 0; f < 5; ++f) raw[c] += model.W[c][f] * phi[f];
      }
      live.push_back({true, true, raw[2] > kDimFloor, raw[3] > kDimFloor});
      preds.push_back({raw[0], raw[1], std::max(raw[2], kDimFloor),
                       std::max(raw[3], kDimFloor)});
    }
    const auto costs =
        matching::reg_cost_matrix(preds, scene.gt, match_variant, sized, lw);
    const auto match = matching::hungarian(costs);
    for (const auto& [pi, gi] : match.pairs) {
      matched_pred.push_back(preds[pi]);
      matched_gt.push_back(scene.gt[gi]);
      matched_phi.push_back(features(scene.init[pi]));
      matched_live.push_back(live[pi]);
    }
  }

  eval.pairs = static_cast<long>(matched_pred.size());
  if (eval.pairs == 0) return eval;

  const double total =
      losses::composite_reg_loss(matched_pred, matched_gt, variant, sized, lw);
  const auto grads = losses::grad_composite_reg_loss(matched_pred, matched_gt,
                                                     variant, sized, lw);
  const double inv_n = 1.0 / static_cast<double>(eval.pairs);
  eval.loss = total * inv_n;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    for (int c = 0; c < 4; ++c) {
      if (!matched_live[k][c]) continue;  // clipped coordinate, flat region
      const double gc = grads[k][c] * inv_n;
      for (int f = 0; f < 5; ++f) {
        eval.grad[c][f] += gc * matched_phi[k][f];
      }
    }
  }
  return eval;
}

inline void check_finite(double loss, const Weights& grad) {
  bool ok = std::isfinite(loss);
  for (const auto& row : grad) {
    for (double g : row) ok = ok && std::isfinite(g);
  }
  if (!ok) {
    throw std::runtime_error(
        "training diverged: non-finite loss or gradient (loss = " +
        std::to_string(loss) + ")");
  }
}

inline void apply_step(RefinementModel& model, const Weights& grad,
                       double rate) {
  for (int c = 0; c < 4; ++c) {
    for (int f = 0; f < 5; ++f) model.W[c][f] -= rate * grad[c][f];
  }
}

}  // namespace detail

/// One full-batch gradient step on the matched composite loss. Returns the
/// pre-step batch loss (mean over matched pairs).
inline double sgd_step(RefinementModel& model,
                       std::span<const LabeledScene> batch,
                       const TrainConfig& cfg) {
  const auto eval =
      detail::branch_gradient(model, batch, cfg.loss_variant, cfg.sized,
                              cfg.loss_weights, cfg.match_with_sized);
  detail::check_finite(eval.loss, eval.grad);
  detail::apply_step(model, eval.grad, cfg.learning_rate);
  return eval.loss;
}

/// Localization quality of a model on a dataset. Pairings come from a fixed
/// plain-L1+GIoU cost with unit term weights so traces are comparable across
/// loss variants; the relative error of a pair is the L1 gap over (w + h) of
/// its ground truth.
inline EpochStats evaluate(const RefinementModel& model,
                           std::span<const LabeledScene> dataset,
                           double image_side) {
  static const losses::LossWeights kEvalWeights{1.0, 1.0};
  static const losses::SizedConfig kEvalSized{};
  std::array<double, 4> err_sum{};
  std::array<double, 4> iou_sum{};
  std::array<long, 4> count{};
  for (const auto& scene : dataset) {
    if (scene.init.empty() || scene.gt.empty()) continue;
    std::vector<BoxCcwh> preds;
    preds.reserve(scene.init.size());
    for (const auto& init : scene.init) preds.push_back(model.refine(init));
    const auto costs = matching::reg_cost_matrix(
        preds, scene.gt, losses::LossVariant::plain_l1, kEvalSized,
        kEvalWeights);
    const auto match = matching::hungarian(costs);
    for (const auto& [pi, gi] : match.pairs) {
      const auto& p = preds[pi];
      const auto& g = scene.gt[gi];
      const double rel =
          (std::abs(p.cx - g.cx) + std::abs(p.cy - g.cy) +
           std::abs(p.w - g.w) + std::abs(p.h - g.h)) /
          (g.w + g.h);
      const double overlap = geometry::iou(p, g);
      const double area_px = g.w * g.h * image_side * image_side;
      const auto bucket = static_cast<int>(cocoeval::bucket_of(area_px));
      for (int slot : {bucket, 3}) {  // 3 = all
        err_sum[slot] += rel;
        iou_sum[slot] += overlap;
        count[slot] += 1;
      }
    }
  }
  EpochStats stats;
  for (int s = 0; s < 4; ++s) {
    stats.buckets[s].count = count[s];
    if (count[s] > 0) {
      stats.buckets[s].mean_rel_err = err_sum[s] / count[s];
      stats.buckets[s].mean_iou = iou_sum[s] / count[s];
    }
  }
  return stats;
}

/// Standard supervised training: fixed consecutive batches, one gradient
/// step per batch, one evaluation per epoch. Deterministic for a given
/// dataset and config.
inline std::pair<RefinementModel, ErrorTrace> train_supervised(
    const std::vector<LabeledScene>& dataset, const TrainConfig& cfg,
    double image_side = 640.0) {
  if (dataset.empty()) {
    throw std::invalid_argument("train_supervised: empty dataset");
  }
  if (!(cfg.learning_rate > 0.0) || cfg.epochs < 1 || cfg.batch_size < 1) {
    throw std::invalid_argument("train_supervised: bad config");
  }
  RefinementModel model;
  ErrorTrace trace;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t start = 0; start < dataset.size(); start += bs) {
      const std::size_t len = std::min(bs, dataset.size() - start);
      sgd_step(model, std::span<const LabeledScene>(&dataset[start], len),
               cfg);
    }
    trace.epochs.push_back(evaluate(model, dataset, image_side));
  }
  return {model, trace};
}

/// teacher <- alpha * teacher + (1 - alpha) * student, elementwise.
inline void ema_update(RefinementModel& teacher, const RefinementModel& student,
                       double alpha) {
  for (int c = 0; c < 4; ++c) {
    for (int f = 0; f < 5; ++f) {
      teacher.W[c][f] = alpha * teacher.W[c][f] + (1.0 - alpha) * student.W[c][f];
    }
  }
}

/// The teacher's refined boxes on the weak view, used as regression targets
/// for the student's strong view. All pseudo-labels are accepted; there is
/// no classifier to rank them at this scale.
inline std::vector<BoxCcwh> pseudo_label(const RefinementModel& teacher,
                                         std::span<const BoxCcwh> weak_inits) {
  std::vector<BoxCcwh> labels;
  labels.reserve(weak_inits.size());
  for (const auto& b : weak_inits) labels.push_back(teacher.refine(b));
  return labels;
}

struct SemiResult {
  RefinementModel teacher;
  RefinementModel student;
  ErrorTrace trace;
};

/// Teacher-student training. Each step takes one labeled batch and one
/// unlabeled batch (cycled), combines the supervised gradient with the
/// weighted pseudo-label gradient, updates the student by descent and the
/// teacher by EMA. With unsup_weight == 0 the unlabeled branch is skipped
/// entirely, so the run reduces bit-exactly to train_supervised. The trace
/// evaluates the student on the labeled set.
inline SemiResult train_semi(const std::vector<LabeledScene>& labeled,
                             const std::vector<UnlabeledScene>& unlabeled,
                             const SemiConfig& cfg, double image_side = 640.0) {
  if (labeled.empty() || unlabeled.empty()) {
    throw std::invalid_argument("train_semi: both datasets must be nonempty");
  }
  if (!(cfg.ema_momentum > 0.0) || !(cfg.ema_momentum <= 1.0)) {
    throw std::invalid_argument("train_semi: ema momentum out of range");
  }
  const TrainConfig& tc = cfg.train;
  if (!(tc.learning_rate > 0.0) || tc.epochs < 1 || tc.batch_size < 1) {
    throw std::invalid_argument("train_semi: bad train config");
  }

  const losses::LossVariant sup_variant = tc.loss_variant;
  const losses::LossVariant unsup_variant =
      cfg.branch_mode == BranchMode::both ? tc.loss_variant
                                          : losses::LossVariant::plain_l1;

  SemiResult result;  // both models start at zero
  const std::size_t bs = static_cast<std::size_t>(tc.batch_size);
  std::size_t unlabeled_cursor = 0;
  std::vector<LabeledScene> pseudo_batch;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t start = 0; start < labeled.size(); start += bs) {
      const std::size_t len = std::min(bs, labeled.size() - start);
      auto eval = detail::branch_gradient(
          result.student, std::span<const LabeledScene>(&labeled[start], len),
          sup_variant, tc.sized, tc.loss_weights, tc.match_with_sized);

      if (cfg.unsup_weight != 0.0) {
        pseudo_batch.clear();
        for (std::size_t k = 0; k < bs; ++k) {
          const auto& scene = unlabeled[unlabeled_cursor];
          unlabeled_cursor = (unlabeled_cursor + 1) % unlabeled.size();
          pseudo_batch.push_back(
              {scene.strong, pseudo_label(result.teacher, scene.weak)});
        }
        const auto unsup = detail::branch_gradient(
            result.student, pseudo_batch, unsup_variant, tc.sized,
            tc.loss_weights, tc.match_with_sized);
        for (int c = 0; c < 4; ++c) {
          for (int f = 0; f < 5; ++f) {
            eval.grad[c][f] += cfg.unsup_weight * unsup.grad[c][f];
          }
        }
        eval.loss += cfg.unsup_weight * unsup.loss;
      }

      detail::check_finite(eval.loss, eval.grad);
      detail::apply_step(result.student, eval.grad, tc.learning_rate);
      ema_update(result.teacher, result.student, cfg.ema_momentum);
    }
    result.trace.epochs.push_back(
        evaluate(result.student, labeled, image_side));
  }
  return result;
}

inline void write_trace_csv(std::ostream& out, const ErrorTrace& trace) {
  out << "epoch,bucket,mean_rel_err,mean_iou\n";
  char buf[96];
  for (std::size_t e = 0; e < trace.epochs.size(); ++e) {
    for (int s = 0; s < 4; ++s) {
      const auto& b = trace.epochs[e].buckets[s];
      std::snprintf(buf, sizeof(buf), "%zu,%s,%.12g,%.12g\n", e,
                    cocoeval::bucket_name(static_cast<cocoeval::SizeBucket>(s)),
                    b.mean_rel_err, b.mean_iou);
      out << buf;
    }
  }
}

inline void write_trace_csv(const std::string& path, const ErrorTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_trace_csv(out, trace);
}

/// Plain-text 4x5 matrix dump, full precision.
inline void write_model(std::ostream& out, const RefinementModel& model) {
  char buf[64];
  for (int c = 0; c < 4; ++c) {
    for (int f = 0; f < 5; ++f) {
      std::snprintf(buf, sizeof(buf), "%.17g%c", model.W[c][f],
                    f == 4 ? '\n' : ' ');
      out << buf;
    }
  }
}

inline void write_model(const std::string& path, const RefinementModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_model(out, model);
}

inline RefinementModel read_model(std::istream& in) {
  RefinementModel model;
  for (int c = 0; c < 4; ++c) {
    for (int f = 0; f < 5; ++f) {
      if (!(in >> model.W[c][f]) || !std::isfinite(model.W[c][f])) {
        throw std::runtime_error("bad model dump");
      }
    }
  }
  return model;
}

inline RefinementModel read_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return read_model(in);
}

}  // namespace sizedl1::trainer
