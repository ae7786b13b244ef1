#pragma once

#include <string>
#include <vector>

#include "timedit/config.hpp"

namespace timedit {

// Command implementations behind the CLI. All are deterministic for a fixed
// (seed, config, inputs) and throw std::invalid_argument for usage/config
// problems, std::runtime_error (or NonFiniteError) for numerical failures.

// Trains with the self-supervised mask mix; writes <out>/model.ckpt and
// <out>/train_loss.csv. Returns the final smoothed loss.
double cmd_train(const RunConfig& cfg, const std::string& out_dir);

// Dispatches on cfg.task.kind: forecast | impute | generate | detect.
// Writes median/quantile/sample CSVs and metrics.json under out_dir.
void cmd_task(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& out_dir, bool physics);

// Standalone metric computation from files written by cmd_task (or external
// tools using the same formats).
void cmd_eval(const std::string& samples_csv, const std::string& truth_csv,
              const std::string& mask_csv, const std::vector<std::string>& metric_names,
              const std::string& out_path);

// Paired unrefined-vs-refined sampling on a PDE task; writes
// physics_summary.json and optionally refine_diagnostics.csv.
void cmd_physics_demo(const RunConfig& cfg, const std::string& checkpoint_path,
                      const std::string& out_dir);

// Writes the configured synthetic dataset (sine or pde) to a JSONL or CSV
// file so that every downstream tool consumes the same formats.
void cmd_gen_data(const RunConfig& cfg, const std::string& out_path, const std::string& format);

}  // namespace timedit
