// Command-line runner for the sized-L1 experiment toolkit.
//
// Subcommands: gradcheck | train | semi | eval | compare.
// Exit codes: 0 success, 1 property failure, 2 input error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "sizedl1/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_overrides(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "experiment config (JSON)")
      ->required();
  cmd->add_option("--seed", flags.seed, "override the config seed");
  cmd->add_option("--out", flags.out, "override the config output dir");
}

sizedl1::cli::ExperimentConfig load(const CommonFlags& flags,
                                    sizedl1::cli::ConfigKind kind) {
  auto cfg = sizedl1::cli::load_config(flags.config, kind);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out) cfg.out_dir = *flags.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sized-L1 box regression experiments"};
  app.require_subcommand(1);

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of all loss gradients");
  std::uint64_t gc_seed = 20240229;
  bool inject_flip = false;
  gradcheck->add_option("--seed", gc_seed, "sampling seed");
  gradcheck
      ->add_flag("--inject-sign-flip", inject_flip,
                 "corrupt one gradient to exercise the harness")
      ->group("");  // test hook, hidden from help

  CommonFlags train_flags;
  auto* train = app.add_subcommand(
      "train", "supervised training, writes trace.csv and model.txt");
  add_overrides(train, train_flags);

  CommonFlags semi_flags;
  auto* semi = app.add_subcommand(
      "semi", "teacher-student training, writes trace.csv and model dumps");
  add_overrides(semi, semi_flags);

  CommonFlags compare_flags;
  auto* compare = app.add_subcommand(
      "compare", "paired-seed loss comparison, writes compare.csv");
  add_overrides(compare, compare_flags);

  auto* eval = app.add_subcommand(
      "eval", "size-bucketed COCO mAP over ground truth and detections");
  std::string gt_path;
  std::string det_path;
  std::optional<std::string> eval_out;
  eval->add_option("--gt", gt_path, "COCO annotation JSON")->required();
  eval->add_option("--det", det_path, "COCO results JSON")->required();
  eval->add_option("--out", eval_out, "directory for eval.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gradcheck->parsed()) {
      return sizedl1::cli::run_gradcheck(gc_seed, inject_flip, std::cout);
    }
    if (train->parsed()) {
      return sizedl1::cli::run_train(
          load(train_flags, sizedl1::cli::ConfigKind::train), std::cout);
    }
    if (semi->parsed()) {
      return sizedl1::cli::run_semi(
          load(semi_flags, sizedl1::cli::ConfigKind::semi), std::cout);
    }
    if (compare->parsed()) {
      return sizedl1::cli::run_compare(
          load(compare_flags, sizedl1::cli::ConfigKind::compare), std::cout);
    }
    if (eval->parsed()) {
      return sizedl1::cli::run_eval(gt_path, det_path, eval_out, std::cout);
    }
  } catch (const sizedl1::cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const sizedl1::cocoeval::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
