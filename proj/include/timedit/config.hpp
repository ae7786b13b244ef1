#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "timedit/model.hpp"
#include "timedit/pde.hpp"
#include "timedit/physics.hpp"
#include "timedit/series.hpp"

namespace timedit {

struct DataConfig {
  std::string path;
  std::string format = "csv";  // csv | jsonl
  bool has_header = true;
  std::vector<double> sentinels;
  std::string normalization = "standardize";  // standardize | minmax | none
  int window = 0;        // 0 = whole series as one instance
  int window_stride = 1;

  struct Synthetic {
    std::string kind = "none";  // none | sine | pde
    int n = 64;
    int L = 96;
    int K = 4;
    double freq_lo = 0.02;
    double freq_hi = 0.10;
    int pde_steps = 47;  // trajectory length = steps + 1
  } synthetic;
};

struct TrainingConfig {
  int steps = 2000;
  int batch_size = 8;
  double lr = 1e-4;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  double stop_loss = 0.0;  // > 0: stop when the smoothed loss crosses it
  double p_random = 1.0 / 3.0;
  double p_block = 1.0 / 3.0;
  double p_stride = 1.0 / 3.0;
  double r_lo = 0.1, r_hi = 0.9;
  int n_blocks_lo = 2, n_blocks_hi = 8;
};

struct TaskConfig {
  std::string kind = "forecast";  // forecast | impute | generate | detect
  int horizon = 24;
  std::vector<double> mask_ratios = {0.125, 0.25, 0.375, 0.5};
  int window = 100;          // detect window
  double percentile = 99.0;  // detect threshold percentile
  int n_samples = 0;         // 0 = task default (30 forecast, 10 otherwise)
  std::string custom_mask_path;
  std::string labels_path;  // ground-truth anomaly labels (CSV)
  int gen_n = 16;  // generated sequences
  int gen_L = 24;
  int sr_q_window = 3;
  int sr_n_neighbor = 2;
};

struct DiffusionConfig {
  int T = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
};

struct PhysicsConfig {
  bool enabled = false;
  PdeSpec pde;
  EnergyConfig energy;
  bool diagnostics_csv = false;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  DiffusionConfig diffusion;
  TrainingConfig training;
  TaskConfig task;
  PhysicsConfig physics;

  int task_samples() const {
    if (task.n_samples > 0) return task.n_samples;
    return task.kind == "forecast" ? 30 : 10;
  }
};

// Strict parse: every field defaulted, unknown keys rejected with their path.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace timedit
