#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sizedl1/coco_eval.hpp"
#include "sizedl1/losses.hpp"
#include "sizedl1/rng.hpp"
#include "sizedl1/synth.hpp"
#include "sizedl1/trainer.hpp"

namespace sizedl1::cli {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Synthetic dataset description shared by the training commands.
struct DataConfig {
  int n_scenes = 48;
  int boxes_per_scene = 8;
  synth::SizeDistribution dist{};
  synth::NoiseModel noise{};
};

struct SemiSection {
  double ema_momentum = 0.999;
  trainer::BranchMode branch_mode = trainer::BranchMode::both;
  double unsup_weight = 1.0;
  int unlabeled_scenes = 96;
  synth::NoiseModel weak_noise{};
  synth::NoiseModel strong_noise{};
};

/// One arm of a comparison: a loss variant, optionally pinned to a branch
/// mode in semi mode ("sized_l1:supervised_only").
struct CompareArm {
  std::string label;
  losses::LossVariant variant = losses::LossVariant::plain_l1;
  std::optional<trainer::BranchMode> branch_mode;
};

struct CompareSection {
  std::vector<CompareArm> arms;
  int repeats = 10;
  bool semi_mode = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  DataConfig data{};
  trainer::TrainConfig train{};
  std::optional<SemiSection> semi;
  std::optional<CompareSection> compare;
};

enum class ConfigKind { train, semi, compare };

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj,
                       std::initializer_list<const char*> allowed,
                       const std::string& ctx) {
  if (!obj.is_object()) throw ConfigError(ctx + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
  }
}

inline const json& need(const json& obj, const char* key,
                        const std::string& ctx) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(ctx + ": missing key '" + key + "'");
  return *it;
}

inline double num(const json& v, const std::string& ctx) {
  if (!v.is_number()) throw ConfigError(ctx + ": expected a number");
  return v.get<double>();
}

inline int integer(const json& v, const std::string& ctx) {
  if (!v.is_number_integer()) throw ConfigError(ctx + ": expected an integer");
  return v.get<int>();
}

inline synth::NoiseModel parse_noise(const json& obj, const std::string& ctx) {
  check_keys(obj, {"mode", "sigma_center", "sigma_size", "sigma_abs"}, ctx);
  synth::NoiseModel noise;
  const std::string mode = need(obj, "mode", ctx).get<std::string>();
  if (mode == "proportional") {
    noise.mode = synth::NoiseMode::proportional;
  } else if (mode == "absolute") {
    noise.mode = synth::NoiseMode::absolute;
  } else {
    throw ConfigError(ctx + ": mode must be 'proportional' or 'absolute'");
  }
  if (obj.contains("sigma_center"))
    noise.sigma_center = num(obj["sigma_center"], ctx + ".sigma_center");
  if (obj.contains("sigma_size"))
    noise.sigma_size = num(obj["sigma_size"], ctx + ".sigma_size");
  if (obj.contains("sigma_abs"))
    noise.sigma_abs = num(obj["sigma_abs"], ctx + ".sigma_abs");
  if (noise.sigma_center < 0 || noise.sigma_size < 0 || noise.sigma_abs < 0) {
    throw ConfigError(ctx + ": noise sigmas must be >= 0");
  }
  return noise;
}

inline DataConfig parse_data(const json& obj, const std::string& ctx) {
  check_keys(obj,
             {"n_scenes", "boxes_per_scene", "bucket_mix", "image_side",
              "area_ranges", "noise"},
             ctx);
  DataConfig data;
  data.n_scenes = integer(need(obj, "n_scenes", ctx), ctx + ".n_scenes");
  data.boxes_per_scene =
      integer(need(obj, "boxes_per_scene", ctx), ctx + ".boxes_per_scene");
  if (data.n_scenes < 1 || data.boxes_per_scene < 1) {
    throw ConfigError(ctx + ": scene and box counts must be >= 1");
  }
  const auto& mix = need(obj, "bucket_mix", ctx);
  if (!mix.is_array() || mix.size() != 3) {
    throw ConfigError(ctx + ": bucket_mix must be an array of 3 proportions");
  }
  for (int i = 0; i < 3; ++i) {
    data.dist.mix[i] = num(mix[i], ctx + ".bucket_mix");
  }
  if (obj.contains("image_side")) {
    data.dist.image_side = num(obj["image_side"], ctx + ".image_side");
  }
  if (obj.contains("area_ranges")) {
    const auto& ranges = obj["area_ranges"];
    if (!ranges.is_array() || ranges.size() != 3) {
      throw ConfigError(ctx + ": area_ranges must be 3 [lo, hi] pairs");
    }
    for (int i = 0; i < 3; ++i) {
      if (!ranges[i].is_array() || ranges[i].size() != 2) {
        throw ConfigError(ctx + ": area_ranges must be 3 [lo, hi] pairs");
      }
      data.dist.area_ranges[i] = {num(ranges[i][0], ctx),
                                  num(ranges[i][1], ctx)};
    }
  }
  data.noise = parse_noise(need(obj, "noise", ctx), ctx + ".noise");
  synth::validate(data.dist);
  return data;
}

inline losses::LossVariant parse_variant(const std::string& name,
                                         const std::string& ctx) {
  if (name == "plain_l1") return losses::LossVariant::plain_l1;
  if (name == "sized_l1") return losses::LossVariant::sized_l1;
  throw ConfigError(ctx + ": loss variant must be 'plain_l1' or 'sized_l1'");
}

inline trainer::TrainConfig parse_train(const json& obj,
                                        const std::string& ctx) {
  check_keys(obj,
             {"learning_rate", "epochs", "batch_size", "loss_variant", "sized",
              "loss_weights", "match_with_sized"},
             ctx);
  trainer::TrainConfig train;
  train.learning_rate =
      num(need(obj, "learning_rate", ctx), ctx + ".learning_rate");
  train.epochs = integer(need(obj, "epochs", ctx), ctx + ".epochs");
  train.batch_size = integer(need(obj, "batch_size", ctx), ctx + ".batch_size");
  if (!(train.learning_rate > 0) || train.epochs < 1 || train.batch_size < 1) {
    throw ConfigError(ctx + ": need learning_rate > 0, epochs/batch_size >= 1");
  }
  train.loss_variant = parse_variant(
      need(obj, "loss_variant", ctx).get<std::string>(), ctx + ".loss_variant");
  if (obj.contains("sized")) {
    const auto& sized = obj["sized"];
    check_keys(sized, {"epsilon", "compensation"}, ctx + ".sized");
    if (sized.contains("epsilon")) {
      train.sized.epsilon = num(sized["epsilon"], ctx + ".sized.epsilon");
      if (!(train.sized.epsilon > 0.0) || train.sized.epsilon > 1e-3) {
        throw ConfigError(ctx + ".sized.epsilon must lie in (0, 1e-3]");
      }
    }
    if (sized.contains("compensation")) {
      const std::string comp = sized["compensation"].get<std::string>();
      if (comp == "none") {
        train.sized.compensation = losses::Compensation::none;
      } else if (comp == "batch_mean") {
        train.sized.compensation = losses::Compensation::batch_mean;
      } else {
        throw ConfigError(ctx + ".sized.compensation must be 'none' or 'batch_mean'");
      }
    }
  }
  if (obj.contains("loss_weights")) {
    const auto& lw = obj["loss_weights"];
    check_keys(lw, {"lambda_l1", "lambda_giou"}, ctx + ".loss_weights");
    if (lw.contains("lambda_l1")) {
      train.loss_weights.lambda_l1 = num(lw["lambda_l1"], ctx);
    }
    if (lw.contains("lambda_giou")) {
      train.loss_weights.lambda_giou = num(lw["lambda_giou"], ctx);
    }
    if (train.loss_weights.lambda_l1 < 0 || train.loss_weights.lambda_giou < 0 ||
        !std::isfinite(train.loss_weights.lambda_l1) ||
        !std::isfinite(train.loss_weights.lambda_giou)) {
      throw ConfigError(ctx + ".loss_weights must be finite and >= 0");
    }
  }
  if (obj.contains("match_with_sized")) {
    if (!obj["match_with_sized"].is_boolean()) {
      throw ConfigError(ctx + ".match_with_sized must be a boolean");
    }
    train.match_with_sized = obj["match_with_sized"].get<bool>();
  }
  return train;
}

inline SemiSection parse_semi(const json& obj, const std::string& ctx) {
  check_keys(obj,
             {"ema_momentum", "branch_mode", "unsup_weight", "unlabeled_scenes",
              "weak_noise", "strong_noise"},
             ctx);
  SemiSection semi;
  if (obj.contains("ema_momentum")) {
    semi.ema_momentum = num(obj["ema_momentum"], ctx + ".ema_momentum");
    if (!(semi.ema_momentum > 0.0) || semi.ema_momentum > 1.0) {
      throw ConfigError(ctx + ".ema_momentum must lie in (0, 1]");
    }
  }
  if (obj.contains("branch_mode")) {
    const std::string mode = obj["branch_mode"].get<std::string>();
    if (mode == "both") {
      semi.branch_mode = trainer::BranchMode::both;
    } else if (mode == "supervised_only") {
      semi.branch_mode = trainer::BranchMode::supervised_only;
    } else {
      throw ConfigError(ctx + ".branch_mode must be 'both' or 'supervised_only'");
    }
  }
  if (obj.contains("unsup_weight")) {
    semi.unsup_weight = num(obj["unsup_weight"], ctx + ".unsup_weight");
    if (semi.unsup_weight < 0) {
      throw ConfigError(ctx + ".unsup_weight must be >= 0");
    }
  }
  semi.unlabeled_scenes =
      integer(need(obj, "unlabeled_scenes", ctx), ctx + ".unlabeled_scenes");
  if (semi.unlabeled_scenes < 1) {
    throw ConfigError(ctx + ".unlabeled_scenes must be >= 1");
  }
  semi.weak_noise = parse_noise(need(obj, "weak_noise", ctx), ctx + ".weak_noise");
  semi.strong_noise =
      parse_noise(need(obj, "strong_noise", ctx), ctx + ".strong_noise");
  return semi;
}

inline CompareSection parse_compare(const json& obj, const std::string& ctx) {
  check_keys(obj, {"variants", "repeats", "mode"}, ctx);
  CompareSection compare;
  if (obj.contains("mode")) {
    const std::string mode = obj["mode"].get<std::string>();
    if (mode == "semi") {
      compare.semi_mode = true;
    } else if (mode != "supervised") {
      throw ConfigError(ctx + ".mode must be 'supervised' or 'semi'");
    }
  }
  if (obj.contains("repeats")) {
    compare.repeats = integer(obj["repeats"], ctx + ".repeats");
    if (compare.repeats < 1) throw ConfigError(ctx + ".repeats must be >= 1");
  }
  const auto& variants = need(obj, "variants", ctx);
  if (!variants.is_array() || variants.empty()) {
    throw ConfigError(ctx + ".variants must be a nonempty array");
  }
  for (const auto& v : variants) {
    const std::string label = v.get<std::string>();
    CompareArm arm;
    arm.label = label;
    const auto colon = label.find(':');
    const std::string base = label.substr(0, colon);
    arm.variant = parse_variant(base, ctx + ".variants");
    if (colon != std::string::npos) {
      if (!compare.semi_mode) {
        throw ConfigError(ctx +
                          ".variants: branch suffixes need compare mode 'semi'");
      }
      const std::string suffix = label.substr(colon + 1);
      if (suffix == "both") {
        arm.branch_mode = trainer::BranchMode::both;
      } else if (suffix == "supervised_only") {
        arm.branch_mode = trainer::BranchMode::supervised_only;
      } else {
        throw ConfigError(ctx + ".variants: unknown branch suffix '" + suffix +
                          "'");
      }
    }
    compare.arms.push_back(arm);
  }
  return compare;
}

}  // namespace detail

/// Parses and validates one experiment config. The schema is strict: any
/// unknown key anywhere in the document is rejected, since a misspelled
/// loss-variant or sigma name would silently change the experiment.
inline ExperimentConfig load_config(const std::string& path, ConfigKind kind) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("malformed JSON in " + path);

  switch (kind) {
    case ConfigKind::train:
      detail::check_keys(doc, {"seed", "out_dir", "data", "train"}, path);
      break;
    case ConfigKind::semi:
      detail::check_keys(doc, {"seed", "out_dir", "data", "train", "semi"},
                         path);
      break;
    case ConfigKind::compare:
      detail::check_keys(
          doc, {"seed", "out_dir", "data", "train", "semi", "compare"}, path);
      break;
  }

  ExperimentConfig cfg;
  const auto& seed = detail::need(doc, "seed", path);
  if (!seed.is_number_unsigned() && !seed.is_number_integer()) {
    throw ConfigError(path + ": 'seed' must be a nonnegative integer");
  }
  const auto seed_val = seed.get<std::int64_t>();
  if (seed_val < 0) throw ConfigError(path + ": 'seed' must be >= 0");
  cfg.seed = static_cast<std::uint64_t>(seed_val);
  cfg.out_dir = detail::need(doc, "out_dir", path).get<std::string>();
  cfg.data = detail::parse_data(detail::need(doc, "data", path), path + ".data");
  cfg.train =
      detail::parse_train(detail::need(doc, "train", path), path + ".train");
  if (kind != ConfigKind::train && doc.contains("semi")) {
    cfg.semi = detail::parse_semi(doc["semi"], path + ".semi");
  }
  if (kind == ConfigKind::semi && !cfg.semi) {
    throw ConfigError(path + ": missing 'semi' section");
  }
  if (kind == ConfigKind::compare) {
    cfg.compare =
        detail::parse_compare(detail::need(doc, "compare", path), path + ".compare");
    if (cfg.compare->semi_mode && !cfg.semi) {
      throw ConfigError(path + ": compare mode 'semi' needs a 'semi' section");
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Dataset construction (seed-addressed, so every command rebuilds the same
// data from the config alone).

namespace detail {

inline std::uint64_t stream_seed(std::uint64_t base, std::uint64_t role,
                                 std::uint64_t index) {
  return rng::derive_seed(rng::derive_seed(base, role), index);
}

}  // namespace detail

inline std::vector<synth::Scene> build_scenes(const DataConfig& data,
                                              std::uint64_t seed,
                                              std::uint64_t role) {
  std::vector<synth::Scene> scenes;
  scenes.reserve(data.n_scenes);
  for (int i = 0; i < data.n_scenes; ++i) {
    auto scene = synth::gen_scene(detail::stream_seed(seed, role, 3 * i),
                                  data.boxes_per_scene, data.dist);
    scene.id = i;
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

inline std::vector<trainer::LabeledScene> build_labeled(const DataConfig& data,
                                                        std::uint64_t seed) {
  const auto scenes = build_scenes(data, seed, 0);
  std::vector<trainer::LabeledScene> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto init = synth::perturb(scenes[i], data.noise,
                               detail::stream_seed(seed, 0, 3 * i + 1));
    out.push_back({std::move(init), scenes[i].gt});
  }
  return out;
}

inline std::vector<trainer::UnlabeledScene> build_unlabeled(
    const DataConfig& data, const SemiSection& semi, std::uint64_t seed) {
  DataConfig unlabeled_data = data;
  unlabeled_data.n_scenes = semi.unlabeled_scenes;
  const auto scenes = build_scenes(unlabeled_data, seed, 1);
  std::vector<trainer::UnlabeledScene> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto weak = synth::perturb(scenes[i], semi.weak_noise,
                               detail::stream_seed(seed, 1, 3 * i + 1));
    auto strong = synth::perturb(scenes[i], semi.strong_noise,
                                 detail::stream_seed(seed, 1, 3 * i + 2));
    out.push_back({std::move(weak), std::move(strong)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command runners. These are the whole of the CLI behavior; the binary only
// parses flags and dispatches here.

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output dir: " + dir);
}

inline std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void log_final_stats(std::ostream& log, const trainer::ErrorTrace& trace) {
  if (trace.epochs.empty()) return;
  const auto& last = trace.epochs.back();
  char buf[256];
  for (int s = 0; s < 4; ++s) {
    std::snprintf(buf, sizeof(buf), "  %-6s rel_err=%.6g iou=%.6g\n",
                  cocoeval::bucket_name(static_cast<cocoeval::SizeBucket>(s)),
                  last.buckets[s].mean_rel_err, last.buckets[s].mean_iou);
    log << buf;
  }
}

}  // namespace detail

inline int run_train(const ExperimentConfig& cfg, std::ostream& log) {
  const auto dataset = build_labeled(cfg.data, cfg.seed);
  trainer::TrainConfig train_cfg = cfg.train;
  train_cfg.seed = cfg.seed;
  const auto [model, trace] =
      trainer::train_supervised(dataset, train_cfg, cfg.data.dist.image_side);
  detail::ensure_dir(cfg.out_dir);
  trainer::write_trace_csv(detail::join(cfg.out_dir, "trace.csv"), trace);
  trainer::write_model(detail::join(cfg.out_dir, "model.txt"), model);
  synth::write_scenes(detail::join(cfg.out_dir, "scenes.txt"),
                      build_scenes(cfg.data, cfg.seed, 0));
  log << "train: " << trace.epochs.size() << " epochs, final stats:\n";
  detail::log_final_stats(log, trace);
  return 0;
}

inline int run_semi(const ExperimentConfig& cfg, std::ostream& log) {
  const SemiSection& semi = *cfg.semi;
  const auto labeled = build_labeled(cfg.data, cfg.seed);
  const auto unlabeled = build_unlabeled(cfg.data, semi, cfg.seed);
  trainer::SemiConfig semi_cfg;
  semi_cfg.train = cfg.train;
  semi_cfg.train.seed = cfg.seed;
  semi_cfg.ema_momentum = semi.ema_momentum;
  semi_cfg.branch_mode = semi.branch_mode;
  semi_cfg.unsup_weight = semi.unsup_weight;
  const auto result = trainer::train_semi(labeled, unlabeled, semi_cfg,
                                          cfg.data.dist.image_side);
  detail::ensure_dir(cfg.out_dir);
  trainer::write_trace_csv(detail::join(cfg.out_dir, "trace.csv"), result.trace);
  trainer::write_model(detail::join(cfg.out_dir, "student.txt"), result.student);
  trainer::write_model(detail::join(cfg.out_dir, "teacher.txt"), result.teacher);
  synth::write_scenes(detail::join(cfg.out_dir, "scenes.txt"),
                      build_scenes(cfg.data, cfg.seed, 0));
  log << "semi: " << result.trace.epochs.size() << " epochs, final stats:\n";
  detail::log_final_stats(log, result.trace);
  return 0;
}

/// Final-epoch stats of one comparison arm on one paired seed.
struct ArmOutcome {
  trainer::EpochStats stats;
  double bias_gap = std::nan("");  // small over large relative error
};

inline ArmOutcome run_arm(const ExperimentConfig& cfg, const CompareArm& arm,
                          std::uint64_t seed) {
  ExperimentConfig run = cfg;
  run.seed = seed;
  run.train.seed = seed;
  run.train.loss_variant = arm.variant;
  ArmOutcome outcome;
  const auto labeled = build_labeled(run.data, run.seed);
  if (cfg.compare->semi_mode) {
    const SemiSection& semi = *run.semi;
    trainer::SemiConfig semi_cfg;
    semi_cfg.train = run.train;
    semi_cfg.ema_momentum = semi.ema_momentum;
    semi_cfg.branch_mode = arm.branch_mode.value_or(semi.branch_mode);
    semi_cfg.unsup_weight = semi.unsup_weight;
    const auto unlabeled = build_unlabeled(run.data, semi, run.seed);
    const auto result = trainer::train_semi(labeled, unlabeled, semi_cfg,
                                            run.data.dist.image_side);
    outcome.stats = result.trace.epochs.back();
  } else {
    const auto [model, trace] =
        trainer::train_supervised(labeled, run.train, run.data.dist.image_side);
    outcome.stats = trace.epochs.back();
  }
  const double small = outcome.stats.buckets[0].mean_rel_err;
  const double large = outcome.stats.buckets[2].mean_rel_err;
  outcome.bias_gap = small / large;
  return outcome;
}

/// Paired-seed comparison across loss variants: every arm sees the same
/// sequence of datasets, so differences are attributable to the loss alone.
inline int run_compare(const ExperimentConfig& cfg, std::ostream& log) {
  const CompareSection& compare = *cfg.compare;
  detail::ensure_dir(cfg.out_dir);
  std::ofstream csv(detail::join(cfg.out_dir, "compare.csv"));
  if (!csv) throw ConfigError("cannot write compare.csv in " + cfg.out_dir);
  csv << "variant,bucket,mean_rel_err,mean_iou,bias_gap\n";
  char buf[256];
  for (const auto& arm : compare.arms) {
    std::array<double, 4> err_sum{};
    std::array<double, 4> iou_sum{};
    double gap_sum = 0.0;
    for (int r = 0; r < compare.repeats; ++r) {
      const std::uint64_t seed = rng::derive_seed(cfg.seed, 0x706169 + r);
      const auto outcome = run_arm(cfg, arm, seed);
      for (int s = 0; s < 4; ++s) {
        err_sum[s] += outcome.stats.buckets[s].mean_rel_err;
        iou_sum[s] += outcome.stats.buckets[s].mean_iou;
      }
      gap_sum += outcome.bias_gap;
    }
    const double inv = 1.0 / compare.repeats;
    const double bias_gap = gap_sum * inv;
    for (int s = 0; s < 4; ++s) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.12g,%.12g,%.12g\n",
                    arm.label.c_str(),
                    cocoeval::bucket_name(static_cast<cocoeval::SizeBucket>(s)),
                    err_sum[s] * inv, iou_sum[s] * inv, bias_gap);
      csv << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "%-28s small=%.6g large=%.6g bias_gap=%.6g\n",
                  arm.label.c_str(), err_sum[0] * inv, err_sum[2] * inv,
                  bias_gap);
    log << buf;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Gradient check harness.

/// A matched pair away from every kink of the losses: coordinate gaps above
/// 1e-3 and no near-ties between corner or enclosing-box terms, so central
/// differences are taken on a smooth neighborhood.
inline std::pair<geometry::BoxCcwh, geometry::BoxCcwh> sample_gradcheck_pair(
    rng::Rng& rng) {
  using geometry::BoxCcwh;
  while (true) {
    BoxCcwh gt;
    gt.w = rng.uniform(0.05, 0.4);
    gt.h = rng.uniform(0.05, 0.4);
    gt.cx = rng.uniform(0.25, 0.75);
    gt.cy = rng.uniform(0.25, 0.75);
    BoxCcwh pred = gt;
    double* coords[4] = {&pred.cx, &pred.cy, &pred.w, &pred.h};
    for (auto* c : coords) {
      const double mag = rng.uniform(2e-3, 0.03);
      *c += rng.uniform() < 0.5 ? -mag : mag;
    }
    if (pred.w < 2e-3 || pred.h < 2e-3) continue;
    const auto a = geometry::ccwh_to_xyxy(pred);
    const auto b = geometry::ccwh_to_xyxy(gt);
    const double gaps[4] = {a.x1 - b.x1, a.x2 - b.x2, a.y1 - b.y1,
                            a.y2 - b.y2};
    bool ok = true;
    for (double g : gaps) ok = ok && std::abs(g) > 1e-3;
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    ok = ok && std::abs(iw) > 1e-3 && std::abs(ih) > 1e-3;
    if (ok) return {pred, gt};
  }
}

struct GradCheckReport {
  double max_l1 = 0.0;
  double max_sized = 0.0;
  double max_giou = 0.0;
  double max_composite = 0.0;
  bool pass(double tol) const {
    return max_l1 <= tol && max_sized <= tol && max_giou <= tol &&
           max_composite <= tol;
  }
};

/// Central finite differences (step 1e-6) against the analytic gradients at
/// `points` sampled non-degenerate pairs. inject_sign_flip corrupts one
/// analytic component so the harness itself can be shown to catch errors.
inline GradCheckReport gradcheck(std::uint64_t seed, int points,
                                 bool inject_sign_flip = false) {
  using geometry::BoxCcwh;
  const double step = 1e-6;
  const losses::SizedConfig sized_cfg{};
  const losses::LossWeights lw{};
  rng::Rng rng(seed);
  GradCheckReport report;

  auto fd_check = [&](const BoxCcwh& pred, const BoxCcwh& gt, auto&& loss_fn,
                      const losses::Grad4& analytic) {
    double max_rel = 0.0;
    double* coords[4];
    BoxCcwh probe = pred;
    coords[0] = &probe.cx;
    coords[1] = &probe.cy;
    coords[2] = &probe.w;
    coords[3] = &probe.h;
    for (int c = 0; c < 4; ++c) {
      const double saved = *coords[c];
      *coords[c] = saved + step;
      const double up = loss_fn(probe, gt);
      *coords[c] = saved - step;
      const double down = loss_fn(probe, gt);
      *coords[c] = saved;
      const double fd = (up - down) / (2.0 * step);
      // Relative for large components, absolute below unit scale; a zero
      // true derivative meets pure rounding noise in the quotient otherwise.
      const double rel = std::abs(analytic[c] - fd) /
                         std::max({std::abs(fd), std::abs(analytic[c]), 1.0});
      max_rel = std::max(max_rel, rel);
    }
    return max_rel;
  };

  for (int i = 0; i < points; ++i) {
    const auto [pred, gt] = sample_gradcheck_pair(rng);
    const std::span<const BoxCcwh> p(&pred, 1);
    const std::span<const BoxCcwh> g(&gt, 1);

    auto l1_grad = losses::grad_l1(
        p, g, std::vector<losses::CoordWeights>{{1.0, 1.0, 1.0, 1.0}})[0];
    if (inject_sign_flip && i == 0) l1_grad[0] = -l1_grad[0];
    report.max_l1 = std::max(
        report.max_l1,
        fd_check(pred, gt,
                 [](const BoxCcwh& a, const BoxCcwh& b) {
                   const std::span<const BoxCcwh> pa(&a, 1), pb(&b, 1);
                   return losses::l1_loss_unit(pa, pb);
                 },
                 l1_grad));

    const auto sized_grad = losses::grad_sized_l1(p, g, sized_cfg)[0];
    report.max_sized = std::max(
        report.max_sized,
        fd_check(pred, gt,
                 [&](const BoxCcwh& a, const BoxCcwh& b) {
                   const std::span<const BoxCcwh> pa(&a, 1), pb(&b, 1);
                   return losses::sized_l1_loss(pa, pb, sized_cfg);
                 },
                 sized_grad));

    const auto giou_grad = losses::grad_giou_loss(pred, gt);
    report.max_giou = std::max(
        report.max_giou, fd_check(pred, gt,
                                  [](const BoxCcwh& a, const BoxCcwh& b) {
                                    return losses::giou_loss(a, b);
                                  },
                                  giou_grad));

    const auto comp_grad = losses::grad_composite_reg_loss(
        p, g, losses::LossVariant::sized_l1, sized_cfg, lw)[0];
    report.max_composite = std::max(
        report.max_composite,
        fd_check(pred, gt,
                 [&](const BoxCcwh& a, const BoxCcwh& b) {
                   const std::span<const BoxCcwh> pa(&a, 1), pb(&b, 1);
                   return losses::composite_reg_loss(
                       pa, pb, losses::LossVariant::sized_l1, sized_cfg, lw);
                 },
                 comp_grad));
  }
  return report;
}

inline int run_gradcheck(std::uint64_t seed, bool inject_sign_flip,
                         std::ostream& log) {
  const double tol = 1e-5;
  const auto report = gradcheck(seed, 1000, inject_sign_flip);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "l1         max_rel_err=%.3g\n", report.max_l1);
  log << buf;
  std::snprintf(buf, sizeof(buf), "sized_l1   max_rel_err=%.3g\n",
                report.max_sized);
  log << buf;
  std::snprintf(buf, sizeof(buf), "giou_loss  max_rel_err=%.3g\n",
                report.max_giou);
  log << buf;
  std::snprintf(buf, sizeof(buf), "composite  max_rel_err=%.3g\n",
                report.max_composite);
  log << buf;
  const bool ok = report.pass(tol);
  log << (ok ? "gradcheck PASS" : "gradcheck FAIL") << " (tolerance " << tol
      << ")\n";
  return ok ? 0 : 1;
}

inline int run_eval(const std::string& gt_path, const std::string& det_path,
                    const std::optional<std::string>& out_dir,
                    std::ostream& log) {
  const auto gt = cocoeval::load_gt(gt_path);
  const auto dets = cocoeval::load_dets(det_path, gt);
  const auto table = cocoeval::map_by_size(dets, gt);
  log << cocoeval::format_table(table);
  if (out_dir) {
    detail::ensure_dir(*out_dir);
    cocoeval::write_csv(detail::join(*out_dir, "eval.csv"), table);
  }
  return 0;
}

}  // namespace sizedl1::cli
