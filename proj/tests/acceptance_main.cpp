// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances and thresholds are pinned in code.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "timedit/commands.hpp"
#include "timedit/dataio.hpp"
#include "timedit/metrics.hpp"
#include "timedit/model.hpp"
#include "timedit/physics.hpp"
#include "timedit/tasks.hpp"

using namespace timedit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmtd(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig config_from_string(const std::string& text) {
  return parse_run_config(nlohmann::json::parse(text));
}

// ---------------------------------------------------------------------------
// 1. gradient integrity
// ---------------------------------------------------------------------------

Outcome c1_gradient_integrity() {
  const double tol = sizeof(real) == 8 ? 1e-6 : 1e-3;
  const double step = sizeof(real) == 8 ? 1e-6 : 1e-3;
  double worst_overall = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_blocks = 1;
    cfg.L_max = 8;
    cfg.K_max = 2;
    cfg.T = 10;
    Rng rng(1000 + seed);
    DenoiserModel model(cfg, rng);
    // exercise the zero-initialized paths too
    for (const char* name : {"head.w", "blocks.0.mod1.scale_w", "blocks.0.mod2.shift_w"}) {
      for (auto& x : model.param_data(name)) x = static_cast<real>(rng.uniform(-0.1, 0.1));
    }
    Rng drng(2000 + seed);
    TimeSeriesBatch batch = gen_sine(1, 8, 2, drng);
    ConditionTargetSplit s = split(batch, block_mask(1, 8, 2, 3));
    NoiseSchedule sched = make_schedule(10, 1e-3, 0.1);
    ForwardDraws draws;
    draws.t = {1 + seed % 10};
    draws.eps.assign(s.x_tar.size(), 0.0);
    for (std::size_t i = 0; i < draws.eps.size(); ++i) {
      if (s.tar_mask[i]) draws.eps[i] = drng.normal();
    }
    Rng unused(0);
    Tensor loss = training_loss(model, s, sched, unused, &draws);
    GradTape tape = backward(loss);

    double scale = 1e-6;
    for (auto& p : model.parameters()) {
      if (const auto* g = tape.find_grad(p.tensor)) {
        for (double v : *g) scale = std::max(scale, std::fabs(v));
      }
    }
    // every parameter tensor is probed; seed 0 checks every coordinate
    for (auto& p : model.parameters()) {
      const auto* g = tape.find_grad(p.tensor);
      auto& data = p.tensor.mutable_data();
      std::size_t stride = seed == 0 ? 1 : std::max<std::size_t>(1, data.size() / 4);
      for (std::size_t i = 0; i < data.size(); i += stride) {
        real keep = data[i];
        data[i] = static_cast<real>(static_cast<double>(keep) + step);
        Rng r1(0);
        double fp = training_loss(model, s, sched, r1, &draws).value();
        data[i] = static_cast<real>(static_cast<double>(keep) - step);
        Rng r2(0);
        double fm = training_loss(model, s, sched, r2, &draws).value();
        data[i] = keep;
        double fd = (fp - fm) / (2 * step);
        double an = g ? (*g)[i] : 0.0;
        worst_overall = std::max(worst_overall, std::fabs(an - fd) / scale);
      }
    }
  }
  Outcome out;
  out.pass = worst_overall < tol;
  out.detail = "max relative error " + fmtd(worst_overall) + " (tol " + fmtd(tol) + ", 20 seeds)";
  return out;
}

// ---------------------------------------------------------------------------
// 2. diffusion statistics
// ---------------------------------------------------------------------------

Outcome c2_diffusion_statistics() {
  NoiseSchedule sched = make_schedule(100, 1e-4, 0.02);
  Rng rng(17);
  int cells = 100000;
  TimeSeriesBatch batch = TimeSeriesBatch::make(1, cells / 10, 10);
  for (auto& v : batch.values) v = rng.normal();
  double mean0 = 0, var0 = 0;
  for (auto v : batch.values) mean0 += v;
  mean0 /= cells;
  for (auto v : batch.values) var0 += (v - mean0) * (v - mean0);
  var0 /= cells;
  ConditionTargetSplit s = split(batch, reconstruction_mask(1, cells / 10, 10));

  double worst_var_rel = 0.0, worst_inv = 0.0;
  for (int t = 10; t <= 100; t += 10) {
    DiffusionSample d = forward_sample(s, {t}, sched, rng);
    double m = 0, v2 = 0;
    for (auto v : d.x_t) m += v;
    m /= cells;
    for (auto v : d.x_t) v2 += (v - m) * (v - m);
    v2 /= cells;
    double ab = sched.alpha_bar_at(t);
    double want = ab * var0 + (1.0 - ab);
    worst_var_rel = std::max(worst_var_rel, std::fabs(v2 - want) / want);
    for (std::size_t i = 0; i < d.x_t.size(); ++i) {
      double rec = (d.x_t[i] - std::sqrt(1.0 - ab) * d.eps[i]) / std::sqrt(ab);
      worst_inv = std::max(worst_inv, std::fabs(rec - s.x_tar[i]));
    }
  }
  Outcome out;
  out.pass = worst_var_rel < 0.03 && worst_inv < 1e-5;
  out.detail = "variance tracking off by " + fmtd(worst_var_rel * 100) +
               "% (tol 3%), inversion error " + fmtd(worst_inv) + " (tol 1e-5)";
  return out;
}

// ---------------------------------------------------------------------------
// 3. mask unit exactness
// ---------------------------------------------------------------------------

Outcome c3_mask_exactness() {
  bool ok = true;
  std::string why;

  TaskMask s84 = stride_mask(1, 8, 1, 4);
  std::uint8_t want84[8] = {1, 1, 0, 0, 1, 1, 0, 0};
  for (int j = 0; j < 8; ++j) ok = ok && s84.visible(0, j, 0) == (want84[j] != 0);
  TaskMask s73 = stride_mask(1, 7, 1, 3);
  std::uint8_t want73[7] = {1, 1, 1, 0, 0, 0, 1};
  for (int j = 0; j < 7; ++j) ok = ok && s73.visible(0, j, 0) == (want73[j] != 0);
  TaskMask b96 = block_mask(1, 96, 2, 24);
  for (int j = 0; j < 96; ++j) {
    ok = ok && b96.visible(0, j, 0) == (j < 72) && b96.visible(0, j, 1) == (j < 72);
  }
  if (!ok) why += "hand-computed patterns mismatch; ";

  Rng rng(5);
  TaskMask quarter = random_mask(1, 1000, 100, 0.25, rng);
  double ones = 0;
  for (auto v : quarter.mask) ones += v;
  double frac = ones / quarter.mask.size();
  if (std::fabs(frac - 0.75) >= 0.01) {
    ok = false;
    why += "keep fraction " + fmtd(frac) + " outside 0.75 +- 0.01; ";
  }

  int violations = 0;
  Rng prng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    int B = prng.uniform_int(1, 3), L = prng.uniform_int(4, 24), K = prng.uniform_int(1, 5);
    TimeSeriesBatch batch = TimeSeriesBatch::make(B, L, K);
    for (auto& v : batch.values) v = prng.uniform(-2, 2);
    for (auto& m : batch.obs_mask) m = prng.uniform() < 0.25 ? 0 : 1;
    for (int b = 0; b < B; ++b) {
      if (prng.uniform() < 0.2) {
        int kz = prng.uniform_int(0, K - 1);
        batch.channel_valid[static_cast<std::size_t>(b) * K + kz] = 0;
        for (int l = 0; l < L; ++l) batch.obs_mask[batch.idx(b, l, kz)] = 0;
      }
    }
    batch.enforce_invariants();
    TaskMask m;
    switch (trial % 4) {
      case 0: m = random_mask(B, L, K, prng.uniform(0.1, 0.9), prng); break;
      case 1: m = block_mask(B, L, K, prng.uniform_int(1, L)); break;
      case 2: m = stride_mask(B, L, K, prng.uniform_int(1, 8)); break;
      default: m = reconstruction_mask(B, L, K); break;
    }
    ConditionTargetSplit s;
    try {
      s = split(batch, m);
    } catch (const std::invalid_argument&) {
      continue;
    }
    for (int b = 0; b < B && violations == 0; ++b) {
      for (int l = 0; l < L; ++l) {
        for (int k = 0; k < K; ++k) {
          std::size_t i = s.idx(b, l, k);
          std::uint8_t usable = batch.obs_mask[i] && batch.valid_channel(b, k);
          if ((s.con_mask[i] & s.tar_mask[i]) != 0 ||
              (s.con_mask[i] | s.tar_mask[i]) != usable) {
            ++violations;
          }
        }
      }
    }
  }
  if (violations > 0) {
    ok = false;
    why += std::to_string(violations) + " split invariant violations; ";
  }

  Outcome out;
  out.pass = ok;
  out.detail = ok ? "patterns exact, keep fraction " + fmtd(frac) +
                        ", 1000 randomized split cases clean"
                  : why;
  return out;
}

// ---------------------------------------------------------------------------
// 4. overfit run
// ---------------------------------------------------------------------------

Outcome c4_overfit_run() {
  auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = config_from_string(R"({
    "data": {"synthetic": {"kind": "sine", "n": 64, "L": 96, "K": 4,
                            "freq_lo": 0.02, "freq_hi": 0.08}},
    "model": {"d_model": 128, "n_heads": 4, "n_blocks": 4, "L_max": 96, "K_max": 8},
    "diffusion": {"T": 100, "beta_start": 1e-3, "beta_end": 0.2},
    "training": {"steps": 2000, "batch_size": 8, "lr": 1e-4, "seed": 11, "stop_loss": 0.1},
    "task": {"kind": "forecast", "horizon": 24}
  })");
  std::string dir = "/tmp/timedit_acc_overfit";
  double final_loss = cmd_train(cfg, dir);

  int steps_used = -1;  // header line
  {
    std::istringstream in(slurp(dir + "/train_loss.csv"));
    std::string line;
    while (std::getline(in, line)) ++steps_used;
  }

  // held-out forecast: fresh sequences from the same generator family
  DenoiserModel model = load_checkpoint(dir + "/model.ckpt");
  Rng eval_rng(777);
  SineConfig sc;
  sc.freq_lo = 0.02;
  sc.freq_hi = 0.08;
  TimeSeriesBatch held = gen_sine(8, 96, 4, eval_rng, sc);
  auto [data, stats] = normalize(held, NormStats::Mode::standardize);
  NoiseSchedule sched = make_schedule(100, 1e-3, 0.2);
  Rng srng(778);
  TaskResult res = forecast(model, data, 24, 8, sched, srng);
  PointMetrics pm = metrics_point(data.values, res.samples.median, res.split.tar_mask);

  double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  Outcome out;
  out.pass = final_loss < 0.1 && steps_used <= 2000 && pm.mse < 0.1 && minutes < 10.0;
  out.detail = "loss " + fmtd(final_loss) + " after " + std::to_string(steps_used) +
               " steps, held-out forecast MSE " + fmtd(pm.mse) + " (tol 0.1), " +
               fmtd(minutes) + " min (limit 10)";
  return out;
}

// ---------------------------------------------------------------------------
// 5. CRPS oracle
// ---------------------------------------------------------------------------

Outcome c5_crps_oracle() {
  // point-mass identity at 19 levels
  double worst_pm = 0.0;
  for (double q : {-0.7, 0.0, 1.3}) {
    for (double x : {-1.5, 0.4, 2.0}) {
      std::vector<double> samples(10, q);
      worst_pm = std::max(worst_pm, std::fabs(crps_discretized(samples, x, 19) -
                                              std::fabs(x - q)));
    }
  }
  // randomized sample sets in the standardized regime the pipeline runs in
  Rng rng(11);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    int n = rng.uniform_int(10, 40);
    double mu = rng.uniform(-1, 1), sd = rng.uniform(0.3, 1.0);
    std::vector<double> samples(n);
    for (auto& v : samples) v = mu + sd * rng.normal();
    double z = std::max(-1.5, std::min(1.5, rng.normal()));
    double x = mu + sd * z;
    double v19 = crps_discretized(samples, x, 19);
    double v512 = crps_discretized(samples, x, 512);
    worst_rel = std::max(worst_rel, std::fabs(v19 - v512) / (1.0 + std::fabs(v512)));
  }
  Outcome out;
  out.pass = worst_pm < 1e-9 && worst_rel < 0.03;
  out.detail = "point-mass error " + fmtd(worst_pm) + ", worst grid-refinement deviation " +
               fmtd(worst_rel) + " (tol 0.03) over 100 sets";
  return out;
}

// ---------------------------------------------------------------------------
// 6. Theorem 1 verification
// ---------------------------------------------------------------------------

Outcome c6_theorem1() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(57);
  int failures = 0;
  double worst_eq9_gap = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    int support = rng.uniform_int(4, 8);
    std::vector<double> p(support), K(support);
    double s = 0;
    for (auto& v : p) {
      v = rng.uniform(0.05, 1.0);
      s += v;
    }
    for (auto& v : p) v /= s;
    for (auto& v : K) v = rng.uniform(-1.0, 1.0);
    // half the instances run at alpha = 1, where the Gibbs form and the
    // KL-regularized objective coincide exactly
    double alpha = inst % 2 == 0 ? 1.0 : rng.uniform(0.2, 3.0);
    auto rep = verify_boltzmann_optimum(p, K, alpha, 10000, rng);
    if (!rep.passed) ++failures;
    if (alpha == 1.0) {
      worst_eq9_gap = std::max(
          worst_eq9_gap, std::fabs(rep.objective_at_q - rep.eq9_objective_at_q));
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome out;
  out.pass = failures == 0 && worst_eq9_gap < 1e-9 && secs < 60.0;
  out.detail = std::to_string(100 - failures) +
               "/100 instances optimal vs 10^4 perturbations each; objective identity gap at "
               "alpha=1: " +
               fmtd(worst_eq9_gap) + "; " + fmtd(secs) + " s (limit 60)";
  return out;
}

// ---------------------------------------------------------------------------
// 7. Langevin stationarity
// ---------------------------------------------------------------------------

Outcome c7_langevin_stationarity() {
  int dim = 100;
  std::vector<double> x(dim, 0.0);
  Rng rng(9);
  auto grad = [](const std::vector<double>& xs, std::vector<double>& g) {
    for (std::size_t i = 0; i < xs.size(); ++i) g[i] = -xs[i];
  };
  langevin_chain(x, grad, 1e-3, 1500, rng);  // burn-in
  double sum = 0, sum2 = 0;
  long count = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    langevin_chain(x, grad, 1e-3, 1, rng);
    for (double v : x) {
      sum += v;
      sum2 += v * v;
      ++count;
    }
  }
  double mean = sum / count;
  double var = sum2 / count - mean * mean;
  Outcome out;
  out.pass = std::fabs(var - 1.0) < 0.1;
  out.detail = "empirical per-coordinate variance " + fmtd(var) + " over 1e5 samples (tol 10%)";
  return out;
}

// ---------------------------------------------------------------------------
// 8. physics refinement direction
// ---------------------------------------------------------------------------

Outcome c8_physics_refinement() {
  auto t0 = std::chrono::steady_clock::now();
  struct Case {
    const char* name;
    const char* config;
  };
  // step sizes follow the residual-gradient scale 1/dt^2 of each solver grid
  std::vector<Case> cases = {
      {"advection", R"({
        "data": {"synthetic": {"kind": "pde", "n": 48, "pde_steps": 24}},
        "model": {"d_model": 48, "n_heads": 4, "n_blocks": 2, "L_max": 25, "K_max": 8},
        "diffusion": {"T": 50, "beta_start": 4e-3, "beta_end": 0.4},
        "training": {"steps": 1200, "batch_size": 8, "lr": 3e-4, "seed": 21},
        "task": {"kind": "forecast", "horizon": 12, "n_samples": 32},
        "physics": {
          "pde": {"family": "advection", "c": 1.0, "dx": 0.125, "dt": 0.05, "grid_size": 8},
          "energy": {"alpha": 0.5, "step": 1e-5, "iters": 50, "logp_mc_samples": 2}
        }
      })"},
      {"diffusion_reaction", R"({
        "data": {"synthetic": {"kind": "pde", "n": 48, "pde_steps": 24}},
        "model": {"d_model": 48, "n_heads": 4, "n_blocks": 2, "L_max": 25, "K_max": 8},
        "diffusion": {"T": 50, "beta_start": 4e-3, "beta_end": 0.4},
        "training": {"steps": 1200, "batch_size": 8, "lr": 3e-4, "seed": 22},
        "task": {"kind": "forecast", "horizon": 12, "n_samples": 32},
        "physics": {
          "pde": {"family": "diffusion_reaction", "D": 1.0, "k": 0.1,
                   "dx": 0.125, "dt": 0.005, "grid_size": 8},
          "energy": {"alpha": 0.5, "step": 1e-7, "iters": 50, "logp_mc_samples": 2}
        }
      })"},
  };
  bool pass = true;
  std::string detail;
  for (const auto& c : cases) {
    RunConfig cfg = config_from_string(c.config);
    std::string dir = std::string("/tmp/timedit_acc_phys_") + c.name;
    cmd_train(cfg, dir);
    cmd_physics_demo(cfg, dir + "/model.ckpt", dir);
    nlohmann::json s = nlohmann::json::parse(slurp(dir + "/physics_summary.json"));
    double k_u = s["mean_abs_K_unrefined"].get<double>();
    double k_r = s["mean_abs_K_refined"].get<double>();
    double m_u = s["mse_unrefined"].get<double>();
    double m_r = s["mse_refined"].get<double>();
    bool ok = k_r < k_u && m_r <= 1.10 * m_u;
    pass = pass && ok;
    detail += std::string(c.name) + ": |K| " + fmtd(k_u) + " -> " + fmtd(k_r) + ", MSE " +
              fmtd(m_u) + " -> " + fmtd(m_r) + (ok ? "; " : " [FAILED]; ");
  }
  double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  pass = pass && minutes < 10.0;
  Outcome out;
  out.pass = pass;
  out.detail = detail + fmtd(minutes) + " min (limit 10)";
  return out;
}

// ---------------------------------------------------------------------------
// 9. anomaly pipeline
// ---------------------------------------------------------------------------

Outcome c9_anomaly_pipeline() {
  // SR localization over 200 randomized sinusoids with SNR >= 10 spikes
  SrConfig sr;
  Rng rng(3);
  int hits = 0;
  for (int trial = 0; trial < 200; ++trial) {
    int L = 256;
    double f = rng.uniform(0.02, 0.1);
    double phase = rng.uniform(0, 6.28);
    std::vector<double> x(L);
    for (int t = 0; t < L; ++t) x[t] = std::sin(6.283185307179586 * f * t + phase);
    int p = rng.uniform_int(10, L - 10);
    x[p] += (rng.uniform() < 0.5 ? -1 : 1) * 10.0 * std::sqrt(0.5);
    auto sal = sr_transform(x, sr);
    hits += static_cast<int>(std::max_element(sal.begin(), sal.end()) - sal.begin()) == p;
  }
  double loc = hits / 200.0;

  // end-to-end detection on a long sinusoid with planted spike segments
  int L = 6000, window = 100;
  TimeSeriesBatch series = TimeSeriesBatch::make(1, L, 1);
  Rng gen(41);
  double f0 = 0.043, ph = 0.7;
  for (int t = 0; t < L; ++t) series.values[t] = std::sin(6.283185307179586 * f0 * t + ph);
  std::vector<std::uint8_t> truth(L, 0);
  int planted = 0;
  for (int seg = 0; seg < 30; ++seg) {
    int start = 40 + gen.uniform_int(0, L - 80);
    int len = gen.uniform_int(1, 4);
    double mag = (gen.uniform() < 0.5 ? -1 : 1) * gen.uniform(6.0, 12.0);
    for (int t = start; t < std::min(L, start + len); ++t) {
      if (truth[t]) continue;
      series.values[t] += mag;
      truth[t] = 1;
      ++planted;
    }
  }

  // in-domain training on SR-concealed windows, then reconstruction scoring
  RunConfig cfg = config_from_string(R"({
    "model": {"d_model": 32, "n_heads": 4, "n_blocks": 2, "L_max": 100, "K_max": 1},
    "diffusion": {"T": 50, "beta_start": 4e-3, "beta_end": 0.4},
    "training": {"steps": 500, "batch_size": 6, "lr": 3e-4, "seed": 31},
    "task": {"kind": "detect", "window": 100, "percentile": 99.0, "n_samples": 10}
  })");
  TimeSeriesBatch concealed = sr_conceal(series, sr);
  TimeSeriesBatch windows = make_windows(concealed, 100, 50);
  auto [train_data, tstats] = normalize(windows, NormStats::Mode::standardize);
  Rng mrng(31);
  DenoiserModel model(cfg.model, mrng);
  NoiseSchedule sched = make_schedule(50, 4e-3, 0.4);
  AdamConfig ac;
  ac.lr = 3e-4;
  Adam opt(ac);
  Rng trng(32);
  MaskMixConfig mix;
  for (int step_i = 0; step_i < 500; ++step_i) {
    std::vector<int> idx(6);
    for (auto& v : idx) v = trng.uniform_int(0, train_data.B - 1);
    TimeSeriesBatch batch = train_data.element(idx[0]);
    for (std::size_t w = 1; w < idx.size(); ++w) {
      TimeSeriesBatch e = train_data.element(idx[w]);
      batch.values.insert(batch.values.end(), e.values.begin(), e.values.end());
      batch.obs_mask.insert(batch.obs_mask.end(), e.obs_mask.begin(), e.obs_mask.end());
      batch.channel_valid.insert(batch.channel_valid.end(), e.channel_valid.begin(),
                                 e.channel_valid.end());
      batch.time_index.insert(batch.time_index.end(), e.time_index.begin(),
                              e.time_index.end());
      batch.B += 1;
    }
    TaskMask mask = sample_training_mask(batch.B, batch.L, batch.K, trng, mix);
    ConditionTargetSplit s;
    try {
      s = split(batch, mask);
    } catch (const std::invalid_argument&) {
      continue;
    }
    Tensor loss = training_loss(model, s, sched, trng);
    GradTape tape = backward(loss);
    model.zero_grad();
    model.accumulate_grads(tape);
    opt.step(model);
  }

  auto [eval_series, estats] = normalize(series, NormStats::Mode::standardize);
  Rng drng(33);
  AnomalyResult res = detect_anomalies(model, eval_series, window, 99.0, sr, 10, sched, drng);
  Prf1 pr = evaluate_anomalies(res, truth);

  // percentile sweep over the same evaluation scores
  std::vector<double> sorted = res.score;
  std::sort(sorted.begin(), sorted.end());
  auto pct_threshold = [&](double pct) {
    double h = pct / 100.0 * (sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(h);
    double w = h - lo;
    return lo + 1 < sorted.size() ? sorted[lo] + w * (sorted[lo + 1] - sorted[lo])
                                  : sorted.back();
  };
  bool monotone = true;
  double prev = 1e300;
  for (double pct : {99.5, 99.0, 98.0, 97.0, 96.0, 95.0}) {
    double th = pct_threshold(pct);
    monotone = monotone && th <= prev;
    prev = th;
  }

  Outcome out;
  out.pass = loc >= 0.95 && pr.f1 >= 0.9 && monotone;
  out.detail = "SR localization " + fmtd(loc * 100) + "% (need 95), F1 " + fmtd(pr.f1) +
               " (P " + fmtd(pr.precision) + ", R " + fmtd(pr.recall) + ", " +
               std::to_string(planted) + " planted points), threshold sweep " +
               (monotone ? "monotone" : "NOT monotone");
  return out;
}

// ---------------------------------------------------------------------------
// 10. imputation protocol
// ---------------------------------------------------------------------------

Outcome c10_imputation_protocol() {
  RunConfig cfg = config_from_string(R"({
    "data": {"synthetic": {"kind": "sine", "n": 32, "L": 48, "K": 3,
                            "freq_lo": 0.02, "freq_hi": 0.08}},
    "model": {"d_model": 32, "n_heads": 4, "n_blocks": 2, "L_max": 48, "K_max": 3},
    "diffusion": {"T": 50, "beta_start": 4e-3, "beta_end": 0.4},
    "training": {"steps": 400, "batch_size": 6, "lr": 3e-4, "seed": 51},
    "task": {"kind": "impute", "n_samples": 10}
  })");
  std::string dir = "/tmp/timedit_acc_impute";
  cmd_train(cfg, dir);
  DenoiserModel model = load_checkpoint(dir + "/model.ckpt");

  Rng erng(52);
  SineConfig sc;
  sc.freq_lo = 0.02;
  sc.freq_hi = 0.08;
  TimeSeriesBatch eval = gen_sine(4, 48, 3, erng, sc);
  auto [data, stats] = normalize(eval, NormStats::Mode::standardize);
  NoiseSchedule sched = make_schedule(50, 4e-3, 0.4);

  std::string detail = "per-ratio MSE/MAE: ";
  double sum_mse = 0, sum_mae = 0;
  bool leak_ok = true;
  int ri = 0;
  for (double ratio : {0.125, 0.25, 0.375, 0.5}) {
    Rng mrng(60 + ri);
    TaskMask mask = random_mask(4, 48, 3, ratio, mrng);
    Rng s1(70 + ri), s2(70 + ri);
    TaskResult res = impute(model, data, mask, 10, sched, s1);
    PointMetrics pm = metrics_point(data.values, res.samples.median, res.split.tar_mask);
    sum_mse += pm.mse;
    sum_mae += pm.mae;
    detail += fmtd(ratio * 100) + "%: " + fmtd(pm.mse) + "/" + fmtd(pm.mae) + "  ";

    // ground-truth leak check: perturbing the held-out target values must
    // not change the predictions
    TimeSeriesBatch perturbed = data;
    for (std::size_t i = 0; i < perturbed.values.size(); ++i) {
      if (res.split.tar_mask[i]) perturbed.values[i] += 31.0;
    }
    TaskResult res2 = impute(model, perturbed, mask, 10, sched, s2);
    for (int s = 0; s < 10 && leak_ok; ++s) {
      for (std::size_t i = 0; i < data.values.size(); ++i) {
        if (res.split.tar_mask[i] && res.samples.samples[s][i] != res2.samples.samples[s][i]) {
          leak_ok = false;
          break;
        }
      }
    }
    ++ri;
  }
  Outcome out;
  out.pass = leak_ok;
  out.detail = detail + "avg " + fmtd(sum_mse / 4) + "/" + fmtd(sum_mae / 4) +
               (leak_ok ? "; leak check clean" : "; LEAK DETECTED");
  return out;
}

// ---------------------------------------------------------------------------
// 11. generation metrics sanity
// ---------------------------------------------------------------------------

Outcome c11_generation_metrics() {
  Rng gen(13);
  TimeSeriesBatch real = gen_sine(1200, 24, 3, gen);
  std::vector<std::vector<double>> real_w(600), shuf_w(600);
  std::size_t per = 24 * 3;
  for (int i = 0; i < 600; ++i) {
    real_w[i].assign(real.values.begin() + i * per, real.values.begin() + (i + 1) * per);
    shuf_w[i].assign(real.values.begin() + (600 + i) * per,
                     real.values.begin() + (601 + i) * per);
  }
  Rng r1(5), r1b(5);
  double disc = discriminative_score(real_w, shuf_w, 24, 3, r1);
  double disc_again = discriminative_score(real_w, shuf_w, 24, 3, r1b);

  Rng r2(7), r3(7);
  double baseline = predictive_score(real_w, real_w, 24, 3, r2);
  double as_synth = predictive_score(real_w, shuf_w, 24, 3, r3);

  Outcome out;
  bool deterministic = disc == disc_again;
  bool pred_ok = std::fabs(as_synth - baseline) < 0.1 * baseline + 0.02;
  out.pass = disc < 0.05 && pred_ok && deterministic;
  out.detail = "discriminative(real, real-shuffled) " + fmtd(disc) +
               " (tol 0.05), predictive " + fmtd(as_synth) + " vs baseline " + fmtd(baseline) +
               (deterministic ? ", deterministic" : ", NON-DETERMINISTIC");
  return out;
}

// ---------------------------------------------------------------------------
// 12. reproducibility
// ---------------------------------------------------------------------------

Outcome c12_reproducibility() {
  const char* cli = TIMEDIT_CLI_PATH;
  const char* cfg = R"({
    "data": {"synthetic": {"kind": "sine", "n": 12, "L": 24, "K": 2}},
    "model": {"d_model": 32, "n_heads": 2, "n_blocks": 2, "L_max": 24, "K_max": 2},
    "diffusion": {"T": 15},
    "training": {"steps": 25, "batch_size": 4, "lr": 0.001, "seed": 7},
    "task": {"kind": "forecast", "horizon": 6, "n_samples": 3}
  })";
  {
    std::ofstream out("/tmp/timedit_acc_repro.json");
    out << cfg;
  }
  auto sh = [&](const std::string& args) {
    std::string cmd = std::string(cli) + " " + args + " >/dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  bool ok = true;
  ok = ok && sh("train --config /tmp/timedit_acc_repro.json --out /tmp/timedit_acc_r1") == 0;
  ok = ok && sh("train --config /tmp/timedit_acc_repro.json --out /tmp/timedit_acc_r2") == 0;
  bool train_same =
      slurp("/tmp/timedit_acc_r1/model.ckpt") == slurp("/tmp/timedit_acc_r2/model.ckpt") &&
      slurp("/tmp/timedit_acc_r1/train_loss.csv") == slurp("/tmp/timedit_acc_r2/train_loss.csv");
  ok = ok && sh("forecast --config /tmp/timedit_acc_repro.json --checkpoint "
                "/tmp/timedit_acc_r1/model.ckpt --out /tmp/timedit_acc_f1") == 0;
  ok = ok && sh("forecast --config /tmp/timedit_acc_repro.json --checkpoint "
                "/tmp/timedit_acc_r1/model.ckpt --out /tmp/timedit_acc_f2") == 0;
  bool fc_same = true;
  for (const char* f : {"median.csv", "samples.csv", "quantiles.csv", "metrics.json"}) {
    fc_same = fc_same && slurp(std::string("/tmp/timedit_acc_f1/") + f) ==
                             slurp(std::string("/tmp/timedit_acc_f2/") + f);
  }

  // save/load preserves the forward bit-exactly
  ModelConfig mc;
  mc.d_model = 32;
  mc.n_heads = 2;
  mc.n_blocks = 2;
  mc.L_max = 24;
  mc.K_max = 2;
  mc.T = 15;
  Rng mrng(3);
  DenoiserModel model(mc, mrng);
  Rng hr(4);
  for (auto& x : model.param_data("head.w")) x = static_cast<real>(hr.uniform(-0.05, 0.05));
  Rng drng(5);
  TimeSeriesBatch batch = gen_sine(1, 24, 2, drng);
  ConditionTargetSplit s = split(batch, block_mask(1, 24, 2, 6));
  std::vector<real> xv(48);
  for (std::size_t i = 0; i < xv.size(); ++i) xv[i] = static_cast<real>(s.x_con[i]);
  Tensor x({24, 2}, xv);
  Tensor before = model.predict_eps(x, 7, element_view(s, 0));
  save_checkpoint(model, "/tmp/timedit_acc_ck.ckpt");
  DenoiserModel loaded = load_checkpoint("/tmp/timedit_acc_ck.ckpt");
  Tensor after = loaded.predict_eps(x, 7, element_view(s, 0));
  bool ckpt_same = before.data() == after.data();

  Outcome out;
  out.pass = ok && train_same && fc_same && ckpt_same;
  out.detail = std::string("train rerun ") + (train_same ? "identical" : "DIFFERS") +
               ", forecast rerun " + (fc_same ? "identical" : "DIFFERS") +
               ", checkpoint forward " + (ckpt_same ? "bit-exact" : "DIFFERS");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    std::function<Outcome()> fn;
  };
  std::vector<Criterion> criteria = {
      {"gradient integrity", c1_gradient_integrity},
      {"diffusion statistics", c2_diffusion_statistics},
      {"mask unit exactness", c3_mask_exactness},
      {"overfit run", c4_overfit_run},
      {"CRPS oracle", c5_crps_oracle},
      {"Theorem 1 verification", c6_theorem1},
      {"Langevin stationarity", c7_langevin_stationarity},
      {"physics refinement direction", c8_physics_refinement},
      {"anomaly pipeline", c9_anomaly_pipeline},
      {"imputation protocol", c10_imputation_protocol},
      {"generation metrics sanity", c11_generation_metrics},
      {"reproducibility", c12_reproducibility},
  };

  int only = argc > 1 ? std::atoi(argv[1]) : 0;
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only > 0 && static_cast<int>(i + 1) != only) continue;
    auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].fn();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %zu — %s: %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].name, out.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !out.pass;
  }
  if (failed == 0) {
    std::printf("all acceptance criteria passed\n");
  } else {
    std::printf("%d criteria FAILED\n", failed);
  }
  return failed == 0 ? 0 : 1;
}
