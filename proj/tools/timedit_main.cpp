// Command-line front end: training, the four downstream tasks, standalone
// metric evaluation, the physics refinement demo, and synthetic dataset
// generation. Exit codes: 0 success, 1 usage/config error, 2 runtime
// numerical failure.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "timedit/commands.hpp"
#include "timedit/tensor.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<int> samples;
  std::optional<double> percentile;
  bool physics = false;
};

timedit::RunConfig load_with_overrides(const CommonArgs& args) {
  timedit::RunConfig cfg = timedit::load_run_config(args.config_path);
  if (args.seed) cfg.training.seed = *args.seed;
  if (args.samples) cfg.task.n_samples = *args.samples;
  if (args.percentile) cfg.task.percentile = *args.percentile;
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_checkpoint) {
  cmd->add_option("--config", args.config_path, "run configuration (JSON)")->required();
  cmd->add_option("--seed", args.seed, "override training.seed");
  cmd->add_option("--out", args.out_dir, "output directory");
  if (needs_checkpoint) {
    cmd->add_option("--checkpoint", args.checkpoint, "model checkpoint")->required();
    cmd->add_option("--samples", args.samples, "override task.n_samples");
    cmd->add_option("--percentile", args.percentile, "override task.percentile");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale conditional diffusion transformer for multivariate time series"};
  app.require_subcommand(1);

  CommonArgs train_args, task_args, demo_args, gen_args;
  std::string eval_samples, eval_truth, eval_mask, eval_out = "-";
  std::vector<std::string> eval_metrics;
  std::string gen_out = "data.jsonl", gen_format = "jsonl";

  CLI::App* train = app.add_subcommand("train", "train a model with the mask-mix objective");
  add_common(train, train_args, false);

  const char* task_names[] = {"forecast", "impute", "generate", "detect"};
  const char* task_help[] = {
      "probabilistic forecast of the block-masked tail",
      "imputation under random-ratio or custom masks",
      "unconditional synthesis plus benchmark scores",
      "reconstruction-error anomaly detection",
  };
  std::vector<CLI::App*> task_cmds;
  for (int i = 0; i < 4; ++i) {
    CLI::App* c = app.add_subcommand(task_names[i], task_help[i]);
    add_common(c, task_args, true);
    c->add_flag("--physics", task_args.physics, "enable Langevin refinement (forecast)");
    task_cmds.push_back(c);
  }

  CLI::App* eval = app.add_subcommand("eval", "metrics from prediction files");
  eval->add_option("--samples", eval_samples, "samples.csv from a task run")->required();
  eval->add_option("--truth", eval_truth, "truth.csv")->required();
  eval->add_option("--mask", eval_mask, "target_mask.csv")->required();
  eval->add_option("--metrics", eval_metrics, "subset of mse,mae,rmse,crps,crps_sum");
  eval->add_option("--out", eval_out, "output path ('-' = stdout)");

  CLI::App* demo = app.add_subcommand("physics-demo", "paired unrefined/refined sampling");
  add_common(demo, demo_args, true);

  CLI::App* gen = app.add_subcommand("gen-data", "write the configured synthetic dataset");
  add_common(gen, gen_args, false);
  gen->add_option("--data-out", gen_out, "output file");
  gen->add_option("--format", gen_format, "csv or jsonl");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      double final_loss = timedit::cmd_train(load_with_overrides(train_args),
                                             train_args.out_dir);
      std::printf("trained: final smoothed loss %.6f, outputs in %s\n", final_loss,
                  train_args.out_dir.c_str());
    } else if (eval->parsed()) {
      timedit::cmd_eval(eval_samples, eval_truth, eval_mask, eval_metrics, eval_out);
    } else if (demo->parsed()) {
      timedit::cmd_physics_demo(load_with_overrides(demo_args), demo_args.checkpoint,
                                demo_args.out_dir);
      std::printf("physics demo written to %s\n", demo_args.out_dir.c_str());
    } else if (gen->parsed()) {
      timedit::cmd_gen_data(load_with_overrides(gen_args), gen_out, gen_format);
      std::printf("dataset written to %s\n", gen_out.c_str());
    } else {
      for (int i = 0; i < 4; ++i) {
        if (task_cmds[i]->parsed()) {
          timedit::RunConfig cfg = load_with_overrides(task_args);
          cfg.task.kind = task_names[i];
          timedit::cmd_task(cfg, task_args.checkpoint, task_args.out_dir, task_args.physics);
          std::printf("%s outputs written to %s\n", task_names[i], task_args.out_dir.c_str());
          break;
        }
      }
    }
  } catch (const timedit::NonFiniteError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "runtime failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
