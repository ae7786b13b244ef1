#include "timedit/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace timedit {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& path) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument("config: unknown key '" + path + it.key() + "'");
    }
  }
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return json{{"d_model", cfg.d_model},
              {"n_heads", cfg.n_heads},
              {"n_blocks", cfg.n_blocks},
              {"L_max", cfg.L_max},
              {"K_max", cfg.K_max},
              {"T", cfg.T},
              {"mask_channel", cfg.mask_channel},
              {"conditioning", cfg.conditioning_name()},
              {"attention", cfg.attention_name()},
              {"patch_len", cfg.patch_len},
              {"patch_stride", cfg.patch_stride},
              {"cond_pooled", cfg.cond_pooled}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  reject_unknown(j,
                 {"d_model", "n_heads", "n_blocks", "L_max", "K_max", "T", "mask_channel",
                  "conditioning", "attention", "patch_len", "patch_stride", "cond_pooled"},
                 "model.");
  get_to(j, "d_model", cfg.d_model);
  get_to(j, "n_heads", cfg.n_heads);
  get_to(j, "n_blocks", cfg.n_blocks);
  get_to(j, "L_max", cfg.L_max);
  get_to(j, "K_max", cfg.K_max);
  get_to(j, "T", cfg.T);
  get_to(j, "mask_channel", cfg.mask_channel);
  if (j.contains("conditioning")) {
    cfg.conditioning =
        ModelConfig::conditioning_from_string(j.at("conditioning").get<std::string>());
  }
  if (j.contains("attention")) {
    cfg.attention = ModelConfig::attention_from_string(j.at("attention").get<std::string>());
  }
  get_to(j, "patch_len", cfg.patch_len);
  get_to(j, "patch_stride", cfg.patch_stride);
  get_to(j, "cond_pooled", cfg.cond_pooled);
  return cfg;
}

RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  reject_unknown(j, {"data", "model", "diffusion", "training", "task", "physics"}, "");

  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d,
                   {"path", "format", "has_header", "sentinels", "normalization", "window",
                    "window_stride", "synthetic"},
                   "data.");
    get_to(d, "path", cfg.data.path);
    get_to(d, "format", cfg.data.format);
    get_to(d, "has_header", cfg.data.has_header);
    get_to(d, "sentinels", cfg.data.sentinels);
    get_to(d, "normalization", cfg.data.normalization);
    get_to(d, "window", cfg.data.window);
    get_to(d, "window_stride", cfg.data.window_stride);
    if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      reject_unknown(s, {"kind", "n", "L", "K", "freq_lo", "freq_hi", "pde_steps"},
                     "data.synthetic.");
      get_to(s, "kind", cfg.data.synthetic.kind);
      get_to(s, "n", cfg.data.synthetic.n);
      get_to(s, "L", cfg.data.synthetic.L);
      get_to(s, "K", cfg.data.synthetic.K);
      get_to(s, "freq_lo", cfg.data.synthetic.freq_lo);
      get_to(s, "freq_hi", cfg.data.synthetic.freq_hi);
      get_to(s, "pde_steps", cfg.data.synthetic.pde_steps);
    }
    if (cfg.data.format != "csv" && cfg.data.format != "jsonl") {
      throw std::invalid_argument("config: data.format must be csv or jsonl");
    }
    if (cfg.data.normalization != "standardize" && cfg.data.normalization != "minmax" &&
        cfg.data.normalization != "none") {
      throw std::invalid_argument("config: data.normalization must be standardize|minmax|none");
    }
  }

  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));

  if (j.contains("diffusion")) {
    const json& d = j.at("diffusion");
    reject_unknown(d, {"T", "beta_start", "beta_end"}, "diffusion.");
    get_to(d, "T", cfg.diffusion.T);
    get_to(d, "beta_start", cfg.diffusion.beta_start);
    get_to(d, "beta_end", cfg.diffusion.beta_end);
  }
  cfg.model.T = cfg.diffusion.T;

  if (j.contains("training")) {
    const json& t = j.at("training");
    reject_unknown(t,
                   {"steps", "batch_size", "lr", "grad_clip", "seed", "stop_loss", "p_random",
                    "p_block", "p_stride", "r_lo", "r_hi", "n_blocks_lo", "n_blocks_hi"},
                   "training.");
    get_to(t, "steps", cfg.training.steps);
    get_to(t, "batch_size", cfg.training.batch_size);
    get_to(t, "lr", cfg.training.lr);
    get_to(t, "grad_clip", cfg.training.grad_clip);
    get_to(t, "seed", cfg.training.seed);
    get_to(t, "stop_loss", cfg.training.stop_loss);
    get_to(t, "p_random", cfg.training.p_random);
    get_to(t, "p_block", cfg.training.p_block);
    get_to(t, "p_stride", cfg.training.p_stride);
    get_to(t, "r_lo", cfg.training.r_lo);
    get_to(t, "r_hi", cfg.training.r_hi);
    get_to(t, "n_blocks_lo", cfg.training.n_blocks_lo);
    get_to(t, "n_blocks_hi", cfg.training.n_blocks_hi);
  }

  if (j.contains("task")) {
    const json& t = j.at("task");
    reject_unknown(t,
                   {"kind", "horizon", "mask_ratios", "window", "percentile", "n_samples",
                    "custom_mask_path", "labels_path", "gen_n", "gen_L", "sr_q_window",
                    "sr_n_neighbor"},
                   "task.");
    get_to(t, "kind", cfg.task.kind);
    get_to(t, "horizon", cfg.task.horizon);
    get_to(t, "mask_ratios", cfg.task.mask_ratios);
    get_to(t, "window", cfg.task.window);
    get_to(t, "percentile", cfg.task.percentile);
    get_to(t, "n_samples", cfg.task.n_samples);
    get_to(t, "custom_mask_path", cfg.task.custom_mask_path);
    get_to(t, "labels_path", cfg.task.labels_path);
    get_to(t, "gen_n", cfg.task.gen_n);
    get_to(t, "gen_L", cfg.task.gen_L);
    get_to(t, "sr_q_window", cfg.task.sr_q_window);
    get_to(t, "sr_n_neighbor", cfg.task.sr_n_neighbor);
    if (cfg.task.kind != "forecast" && cfg.task.kind != "impute" && cfg.task.kind != "generate" &&
        cfg.task.kind != "detect") {
      throw std::invalid_argument("config: task.kind must be forecast|impute|generate|detect");
    }
  }

  if (j.contains("physics")) {
    const json& p = j.at("physics");
    reject_unknown(p, {"pde", "energy", "diagnostics_csv"}, "physics.");
    cfg.physics.enabled = true;
    get_to(p, "diagnostics_csv", cfg.physics.diagnostics_csv);
    if (p.contains("pde")) {
      const json& q = p.at("pde");
      reject_unknown(q, {"family", "c", "nu", "D", "k", "dx", "dt", "grid_size", "blowup_bound"},
                     "physics.pde.");
      if (q.contains("family")) {
        cfg.physics.pde.family = PdeSpec::family_from_string(q.at("family").get<std::string>());
      }
      get_to(q, "c", cfg.physics.pde.c);
      get_to(q, "nu", cfg.physics.pde.nu);
      get_to(q, "D", cfg.physics.pde.D);
      get_to(q, "k", cfg.physics.pde.k);
      get_to(q, "dx", cfg.physics.pde.dx);
      get_to(q, "dt", cfg.physics.pde.dt);
      get_to(q, "grid_size", cfg.physics.pde.grid_size);
      get_to(q, "blowup_bound", cfg.physics.pde.blowup_bound);
      cfg.physics.pde.validate();
    }
    if (p.contains("energy")) {
      const json& e = p.at("energy");
      reject_unknown(e,
                     {"alpha", "step", "iters", "logp_mc_samples", "t_band_frac", "full_range_t",
                      "divergence_bound", "seed"},
                     "physics.energy.");
      get_to(e, "alpha", cfg.physics.energy.alpha);
      get_to(e, "step", cfg.physics.energy.step);
      get_to(e, "iters", cfg.physics.energy.iters);
      get_to(e, "logp_mc_samples", cfg.physics.energy.logp_mc_samples);
      get_to(e, "t_band_frac", cfg.physics.energy.t_band_frac);
      get_to(e, "full_range_t", cfg.physics.energy.full_range_t);
      get_to(e, "divergence_bound", cfg.physics.energy.divergence_bound);
      get_to(e, "seed", cfg.physics.energy.seed);
      cfg.physics.energy.validate();
    }
  }

  cfg.model.validate();
  if (cfg.diffusion.T < 1) throw std::invalid_argument("config: diffusion.T must be >= 1");
  if (cfg.training.batch_size < 1 || cfg.training.steps < 0) {
    throw std::invalid_argument("config: bad training section");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);  // allow comments
  } catch (const std::exception& e) {
    throw std::invalid_argument("config: parse error in '" + path + "': " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace timedit
