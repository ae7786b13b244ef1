#include "timedit/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>

#include <json.hpp>

#include "timedit/dataio.hpp"
#include "timedit/metrics.hpp"
#include "timedit/model.hpp"
#include "timedit/parallel.hpp"
#include "timedit/tasks.hpp"

namespace timedit {

namespace {

// rng stream ids per purpose; all derive from the config seed
enum : std::uint64_t { kStreamData = 1, kStreamModel = 2, kStreamTrain = 3, kStreamTask = 4 };

TimeSeriesBatch load_dataset(const RunConfig& cfg, Rng& rng) {
  const auto& d = cfg.data;
  TimeSeriesBatch batch;
  if (d.synthetic.kind == "sine") {
    SineConfig sc;
    sc.freq_lo = d.synthetic.freq_lo;
    sc.freq_hi = d.synthetic.freq_hi;
    Rng drng = rng.fork(kStreamData);
    batch = gen_sine(d.synthetic.n, d.synthetic.L, d.synthetic.K, drng, sc);
  } else if (d.synthetic.kind == "pde") {
    if (!cfg.physics.enabled) {
      throw std::invalid_argument("data.synthetic.kind=pde requires a physics section");
    }
    Rng drng = rng.fork(kStreamData);
    batch = gen_pde_dataset(cfg.physics.pde, d.synthetic.n, d.synthetic.pde_steps, drng);
  } else if (d.synthetic.kind != "none") {
    throw std::invalid_argument("config: data.synthetic.kind must be none|sine|pde");
  } else {
    if (d.path.empty()) throw std::invalid_argument("config: data.path is required");
    CsvSchema schema;
    schema.has_header = d.has_header;
    schema.sentinels = d.sentinels;
    batch = d.format == "jsonl" ? load_jsonl(d.path) : load_csv(d.path, schema);
  }
  if (batch.K > cfg.model.K_max) {
    // channel chunking keeps the first group; full multi-chunk evaluation is
    // driven by chunked configs
    batch = chunk_channels(batch, cfg.model.K_max)[0];
  }
  return batch;
}

TimeSeriesBatch window_for_model(const RunConfig& cfg, TimeSeriesBatch batch) {
  if (cfg.data.window > 0) {
    batch = make_windows(batch, cfg.data.window, cfg.data.window_stride);
  }
  if (batch.L > cfg.model.L_max) {
    throw std::invalid_argument("dataset length " + std::to_string(batch.L) +
                                " exceeds L_max; set data.window");
  }
  return batch;
}

TimeSeriesBatch gather_elements(const TimeSeriesBatch& batch, const std::vector<int>& idx) {
  TimeSeriesBatch out = TimeSeriesBatch::make(static_cast<int>(idx.size()), batch.L, batch.K);
  for (std::size_t w = 0; w < idx.size(); ++w) {
    int b = idx[w];
    std::size_t per = static_cast<std::size_t>(batch.L) * batch.K;
    std::copy(batch.values.begin() + b * per, batch.values.begin() + (b + 1) * per,
              out.values.begin() + w * per);
    std::copy(batch.obs_mask.begin() + b * per, batch.obs_mask.begin() + (b + 1) * per,
              out.obs_mask.begin() + w * per);
    std::copy(batch.channel_valid.begin() + static_cast<std::size_t>(b) * batch.K,
              batch.channel_valid.begin() + static_cast<std::size_t>(b + 1) * batch.K,
              out.channel_valid.begin() + w * batch.K);
    std::copy(batch.time_index.begin() + static_cast<std::size_t>(b) * batch.L,
              batch.time_index.begin() + static_cast<std::size_t>(b + 1) * batch.L,
              out.time_index.begin() + w * batch.L);
  }
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::invalid_argument("cannot create output directory '" + dir + "'");
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot open '" + path + "' for writing");
  out << content;
}

std::string fmt(double v, const char* spec = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

NormStats::Mode norm_mode(const RunConfig& cfg) {
  return norm_mode_from_string(cfg.data.normalization == "none" ? "standardize"
                                                                : cfg.data.normalization);
}

std::pair<TimeSeriesBatch, std::optional<NormStats>> maybe_normalize(const RunConfig& cfg,
                                                                     TimeSeriesBatch batch) {
  if (cfg.data.normalization == "none") return {std::move(batch), std::nullopt};
  auto [nb, st] = normalize(batch, norm_mode(cfg));
  return {std::move(nb), std::move(st)};
}

// one training step over a batch of windows; returns the mean element loss
double train_batch_step(DenoiserModel& model, Adam& opt, const TimeSeriesBatch& batch,
                        const TaskMask& mask, const NoiseSchedule& sched, Rng& step_rng) {
  int B = batch.B;
  std::size_t per = static_cast<std::size_t>(batch.L) * batch.K;
  std::vector<ConditionTargetSplit> splits(B);
  std::vector<ForwardDraws> draws(B);
  std::vector<char> usable(B, 0);
  int active = 0;
  for (int b = 0; b < B; ++b) {
    TimeSeriesBatch eb = batch.element(b);
    std::vector<std::uint8_t> cells(mask.mask.begin() + b * per,
                                    mask.mask.begin() + (b + 1) * per);
    TaskMask mb = custom_mask(1, batch.L, batch.K, std::move(cells));
    try {
      splits[b] = split(eb, mb);
      usable[b] = 1;
      ++active;
    } catch (const std::invalid_argument&) {
      // a degenerate mask left nothing to denoise for this element
    }
    draws[b].t = {step_rng.uniform_int(1, sched.T)};
    draws[b].eps.assign(per, 0.0);
    if (usable[b]) {
      for (std::size_t i = 0; i < per; ++i) {
        if (splits[b].tar_mask[i]) draws[b].eps[i] = step_rng.normal();
      }
    }
  }
  if (active == 0) return 0.0;

  std::vector<double> losses(B, 0.0);
  std::vector<std::optional<GradTape>> tapes(B);
  parallel_for(B, [&](int b) {
    if (!usable[b]) return;
    Rng unused(0);
    Tensor loss = training_loss(model, splits[b], sched, unused, &draws[b]);
    losses[b] = loss.value();
    Tensor scaled = mul_scalar(loss, 1.0 / active);
    tapes[b] = backward(scaled);
  });
  for (int b = 0; b < B; ++b) {
    if (tapes[b]) model.accumulate_grads(*tapes[b]);
  }
  opt.step(model);
  double mean = 0.0;
  for (int b = 0; b < B; ++b) mean += losses[b];
  return mean / active;
}

}  // namespace

double cmd_train(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  Rng base(cfg.training.seed);

  TimeSeriesBatch raw = load_dataset(cfg, base);
  if (cfg.task.kind == "detect") {
    SrConfig sr;
    sr.q_window = cfg.task.sr_q_window;
    sr.n_neighbor = cfg.task.sr_n_neighbor;
    raw = sr_conceal(raw, sr);
  }
  TimeSeriesBatch windows = window_for_model(cfg, std::move(raw));
  auto [data, stats] = maybe_normalize(cfg, std::move(windows));

  Rng mrng = base.fork(kStreamModel);
  DenoiserModel model(cfg.model, mrng);
  AdamConfig ac;
  ac.lr = cfg.training.lr;
  ac.grad_clip = cfg.training.grad_clip;
  Adam opt(ac);
  NoiseSchedule sched = make_schedule(cfg.diffusion.T, cfg.diffusion.beta_start,
                                      cfg.diffusion.beta_end);
  MaskMixConfig mix;
  mix.p_random = cfg.training.p_random;
  mix.p_block = cfg.training.p_block;
  mix.p_stride = cfg.training.p_stride;
  mix.r_lo = cfg.training.r_lo;
  mix.r_hi = cfg.training.r_hi;
  mix.n_blocks_lo = cfg.training.n_blocks_lo;
  mix.n_blocks_hi = cfg.training.n_blocks_hi;

  Rng trng = base.fork(kStreamTrain);
  std::ofstream curve(out_dir + "/train_loss.csv", std::ios::binary);
  if (!curve) throw std::invalid_argument("cannot open training-curve CSV for writing");
  curve << "step,loss\n";
  double smoothed = -1.0;
  int B = std::min(cfg.training.batch_size, data.B);
  for (int step_i = 1; step_i <= cfg.training.steps; ++step_i) {
    std::vector<int> idx(B);
    for (auto& v : idx) v = trng.uniform_int(0, data.B - 1);
    TimeSeriesBatch batch = gather_elements(data, idx);
    TaskMask mask = sample_training_mask(B, batch.L, batch.K, trng, mix);
    double loss = train_batch_step(model, opt, batch, mask, sched, trng);
    smoothed = smoothed < 0 ? loss : 0.9 * smoothed + 0.1 * loss;
    curve << step_i << "," << fmt(loss, "%.9g") << "\n";
    if (step_i % 25 == 0) curve.flush();
    if (cfg.training.stop_loss > 0.0 && smoothed < cfg.training.stop_loss) break;
  }
  curve.flush();
  save_checkpoint(model, out_dir + "/model.ckpt");
  return smoothed;
}

namespace {

void write_long_csv(const std::string& path, const SampleSet& set,
                    const std::vector<double>& values, const char* value_col) {
  std::string out = std::string("b,t,k,") + value_col + "\n";
  for (int b = 0; b < set.B; ++b) {
    for (int l = 0; l < set.L; ++l) {
      for (int k = 0; k < set.K; ++k) {
        out += std::to_string(b) + "," + std::to_string(l) + "," + std::to_string(k) + "," +
               fmt(values[set.cell(b, l, k)]) + "\n";
      }
    }
  }
  write_text(path, out);
}

void write_samples_csv(const std::string& path, const SampleSet& set) {
  std::string out = "sample,b,t,k,value\n";
  for (int s = 0; s < set.n; ++s) {
    for (int b = 0; b < set.B; ++b) {
      for (int l = 0; l < set.L; ++l) {
        for (int k = 0; k < set.K; ++k) {
          out += std::to_string(s) + "," + std::to_string(b) + "," + std::to_string(l) + "," +
                 std::to_string(k) + "," + fmt(set.samples[s][set.cell(b, l, k)]) + "\n";
        }
      }
    }
  }
  write_text(path, out);
}

void write_quantiles_csv(const std::string& path, const SampleSet& set) {
  std::string out = "b,t,k,level,value\n";
  for (int b = 0; b < set.B; ++b) {
    for (int l = 0; l < set.L; ++l) {
      for (int k = 0; k < set.K; ++k) {
        for (int q = 0; q < SampleSet::kLevels; ++q) {
          out += std::to_string(b) + "," + std::to_string(l) + "," + std::to_string(k) + "," +
                 fmt(0.05 * (q + 1), "%.2f") + "," + fmt(set.quantile(b, l, k, q)) + "\n";
        }
      }
    }
  }
  write_text(path, out);
}

void write_mask_csv(const std::string& path, const ConditionTargetSplit& s) {
  std::string out = "b,t,k,target\n";
  for (int b = 0; b < s.B; ++b) {
    for (int l = 0; l < s.L; ++l) {
      for (int k = 0; k < s.K; ++k) {
        out += std::to_string(b) + "," + std::to_string(l) + "," + std::to_string(k) + "," +
               std::to_string(static_cast<int>(s.tar_mask[s.idx(b, l, k)])) + "\n";
      }
    }
  }
  write_text(path, out);
}

void write_truth_csv(const std::string& path, const TimeSeriesBatch& batch) {
  std::string out = "b,t,k,value\n";
  for (int b = 0; b < batch.B; ++b) {
    for (int l = 0; l < batch.L; ++l) {
      for (int k = 0; k < batch.K; ++k) {
        out += std::to_string(b) + "," + std::to_string(l) + "," + std::to_string(k) + "," +
               fmt(batch.val(b, l, k)) + "\n";
      }
    }
  }
  write_text(path, out);
}

nlohmann::json task_metrics(const TaskResult& res, const std::vector<double>& truth) {
  PointMetrics pm = metrics_point(truth, res.samples.median, res.split.tar_mask);
  CrpsResult cr = crps(res.samples, truth, res.split.tar_mask);
  return nlohmann::json{{"mse", pm.mse},
                        {"mae", pm.mae},
                        {"rmse", pm.rmse},
                        {"crps", cr.crps},
                        {"crps_sum", cr.crps_sum},
                        {"cells", pm.count}};
}

DenoiserModel load_model_checked(const RunConfig& cfg, const std::string& checkpoint_path) {
  DenoiserModel model = load_checkpoint(checkpoint_path);
  if (!(model.config() == cfg.model)) {
    throw std::invalid_argument(
        "checkpoint/config mismatch: the model section does not match the checkpoint (stored " +
        std::string(model.config().attention_name()) + "/" +
        model.config().conditioning_name() + ", d_model " +
        std::to_string(model.config().d_model) + ", K_max " +
        std::to_string(model.config().K_max) + ")");
  }
  return model;
}

}  // namespace

void cmd_task(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& out_dir, bool physics) {
  ensure_dir(out_dir);
  DenoiserModel model = load_model_checked(cfg, checkpoint_path);
  Rng base(cfg.training.seed);
  TimeSeriesBatch raw = load_dataset(cfg, base);
  NoiseSchedule sched = make_schedule(cfg.diffusion.T, cfg.diffusion.beta_start,
                                      cfg.diffusion.beta_end);
  Rng trng = base.fork(kStreamTask);
  int n = cfg.task_samples();
  nlohmann::json metrics;

  if (cfg.task.kind == "forecast") {
    TimeSeriesBatch windows = window_for_model(cfg, std::move(raw));
    auto [data, stats] = maybe_normalize(cfg, std::move(windows));
    std::optional<RefineSpec> refine;
    if (physics) {
      if (!cfg.physics.enabled) {
        throw std::invalid_argument("--physics requires a physics section in the config");
      }
      refine = RefineSpec{cfg.physics.pde, cfg.physics.energy};
    }
    TaskResult res = forecast(model, data, cfg.task.horizon, n, sched, trng, refine);
    metrics = task_metrics(res, data.values);
    metrics["task"] = "forecast";
    metrics["horizon"] = cfg.task.horizon;
    metrics["n_samples"] = n;
    write_long_csv(out_dir + "/median.csv", res.samples, res.samples.median, "value");
    write_quantiles_csv(out_dir + "/quantiles.csv", res.samples);
    write_samples_csv(out_dir + "/samples.csv", res.samples);
    write_mask_csv(out_dir + "/target_mask.csv", res.split);
    write_truth_csv(out_dir + "/truth.csv", data);
  } else if (cfg.task.kind == "impute") {
    TimeSeriesBatch windows = window_for_model(cfg, std::move(raw));
    auto [data, stats] = maybe_normalize(cfg, std::move(windows));
    if (!cfg.task.custom_mask_path.empty()) {
      if (data.B != 1) {
        throw std::invalid_argument("custom imputation masks expect a single instance");
      }
      auto cells = load_mask_csv(cfg.task.custom_mask_path, data.L, data.K);
      TaskMask mask = custom_mask(1, data.L, data.K, std::move(cells));
      TaskResult res = impute(model, data, mask, n, sched, trng);
      metrics = task_metrics(res, data.values);
      metrics["task"] = "impute";
      metrics["mask"] = "custom";
      write_long_csv(out_dir + "/median.csv", res.samples, res.samples.median, "value");
      write_quantiles_csv(out_dir + "/quantiles.csv", res.samples);
      write_samples_csv(out_dir + "/samples.csv", res.samples);
      write_mask_csv(out_dir + "/target_mask.csv", res.split);
      write_truth_csv(out_dir + "/truth.csv", data);
    } else {
      double sum_mse = 0, sum_mae = 0;
      metrics["task"] = "impute";
      metrics["ratios"] = nlohmann::json::array();
      int ri = 0;
      for (double ratio : cfg.task.mask_ratios) {
        Rng mrng = trng.fork(100 + ri);
        TaskMask mask = random_mask(data.B, data.L, data.K, ratio, mrng);
        Rng srng = trng.fork(200 + ri);
        TaskResult res = impute(model, data, mask, n, sched, srng);
        nlohmann::json rm = task_metrics(res, data.values);
        rm["ratio"] = ratio;
        metrics["ratios"].push_back(rm);
        sum_mse += rm["mse"].get<double>();
        sum_mae += rm["mae"].get<double>();
        std::string tag = fmt(ratio, "%.4g");
        write_long_csv(out_dir + "/median_r" + tag + ".csv", res.samples, res.samples.median,
                       "value");
        write_samples_csv(out_dir + "/samples_r" + tag + ".csv", res.samples);
        write_mask_csv(out_dir + "/target_mask_r" + tag + ".csv", res.split);
        ++ri;
      }
      metrics["mse"] = sum_mse / cfg.task.mask_ratios.size();
      metrics["mae"] = sum_mae / cfg.task.mask_ratios.size();
      write_truth_csv(out_dir + "/truth.csv", data);
    }
  } else if (cfg.task.kind == "generate") {
    TimeSeriesBatch windows = window_for_model(cfg, std::move(raw));
    auto [data, stats] = maybe_normalize(cfg, std::move(windows));
    TaskResult res = generate(model, cfg.task.gen_n, cfg.task.gen_L, data.K, n, sched, trng);
    write_samples_csv(out_dir + "/samples.csv", res.samples);
    write_long_csv(out_dir + "/median.csv", res.samples, res.samples.median, "value");

    // benchmark scores against equally many real windows of the same length
    TimeSeriesBatch real = make_windows(data, cfg.task.gen_L,
                                        std::max(1, data.L / std::max(1, cfg.task.gen_L)));
    int count = std::min(real.B, cfg.task.gen_n);
    std::vector<std::vector<double>> real_w(count), synth_w(count);
    std::size_t per = static_cast<std::size_t>(cfg.task.gen_L) * data.K;
    for (int i = 0; i < count; ++i) {
      real_w[i].assign(real.values.begin() + i * per, real.values.begin() + (i + 1) * per);
      // first sample of each generated sequence forms the synthetic side
      synth_w[i].assign(res.samples.samples[0].begin() + i * per,
                        res.samples.samples[0].begin() + (i + 1) * per);
    }
    Rng srng = trng.fork(11);
    double disc = discriminative_score(real_w, synth_w, cfg.task.gen_L, data.K, srng);
    Rng prng = trng.fork(12);
    double pred = predictive_score(real_w, synth_w, cfg.task.gen_L, data.K, prng);
    metrics = {{"task", "generate"},
               {"discriminative_score", disc},
               {"predictive_score", pred},
               {"windows", count}};
  } else {  // detect
    if (raw.B != 1) throw std::invalid_argument("detect expects a single series");
    auto [data, stats] = maybe_normalize(cfg, std::move(raw));
    SrConfig sr;
    sr.q_window = cfg.task.sr_q_window;
    sr.n_neighbor = cfg.task.sr_n_neighbor;
    AnomalyResult res = detect_anomalies(model, data, cfg.task.window, cfg.task.percentile, sr,
                                         n, sched, trng);
    metrics = {{"task", "detect"},
               {"threshold", res.threshold},
               {"percentile", res.percentile},
               {"flagged", static_cast<int>(std::count(res.raw_labels.begin(),
                                                       res.raw_labels.end(), 1))}};
    if (!cfg.task.labels_path.empty()) {
      TimeSeriesBatch lab = load_csv(cfg.task.labels_path);
      if (lab.L != data.L) throw std::invalid_argument("labels length does not match series");
      std::vector<std::uint8_t> truth(data.L);
      for (int l = 0; l < data.L; ++l) truth[l] = lab.val(0, l, 0) != 0.0;
      Prf1 pr = evaluate_anomalies(res, truth);
      metrics["precision"] = pr.precision;
      metrics["recall"] = pr.recall;
      metrics["f1"] = pr.f1;
    }
    std::string out = "t,score,raw,adjusted\n";
    for (int l = 0; l < data.L; ++l) {
      out += std::to_string(l) + "," + fmt(res.score[l]) + "," +
             std::to_string(static_cast<int>(res.raw_labels[l])) + "," +
             std::to_string(res.adjusted_labels.empty()
                                ? 0
                                : static_cast<int>(res.adjusted_labels[l])) +
             "\n";
    }
    write_text(out_dir + "/anomaly.csv", out);
  }

  write_text(out_dir + "/metrics.json", metrics.dump(2) + "\n");
}

namespace {

// long CSV with named integer columns followed by one value column
struct LongCsv {
  std::vector<std::vector<double>> rows;
};

LongCsv read_long_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  LongCsv out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos
                                                                     : comma - pos);
      row.push_back(std::strtod(cell.c_str(), nullptr));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace

void cmd_eval(const std::string& samples_csv, const std::string& truth_csv,
              const std::string& mask_csv, const std::vector<std::string>& metric_names,
              const std::string& out_path) {
  LongCsv samples = read_long_csv(samples_csv);  // sample,b,t,k,value
  LongCsv truth = read_long_csv(truth_csv);      // b,t,k,value
  LongCsv maskf = read_long_csv(mask_csv);       // b,t,k,target

  int n = 0, B = 0, L = 0, K = 0;
  for (const auto& r : samples.rows) {
    if (r.size() != 5) throw std::invalid_argument("samples file: expected 5 columns");
    n = std::max(n, static_cast<int>(r[0]) + 1);
    B = std::max(B, static_cast<int>(r[1]) + 1);
    L = std::max(L, static_cast<int>(r[2]) + 1);
    K = std::max(K, static_cast<int>(r[3]) + 1);
  }
  std::size_t cells = static_cast<std::size_t>(B) * L * K;
  if (truth.rows.size() != cells || maskf.rows.size() != cells) {
    throw std::invalid_argument("eval: truth/mask shapes do not match the samples file");
  }
  std::vector<std::vector<double>> sample_vals(n, std::vector<double>(cells, 0.0));
  for (const auto& r : samples.rows) {
    std::size_t c = (static_cast<std::size_t>(r[1]) * L + static_cast<std::size_t>(r[2])) * K +
                    static_cast<std::size_t>(r[3]);
    sample_vals[static_cast<int>(r[0])][c] = r[4];
  }
  std::vector<double> y(cells);
  std::vector<std::uint8_t> mask(cells);
  for (const auto& r : truth.rows) {
    std::size_t c = (static_cast<std::size_t>(r[0]) * L + static_cast<std::size_t>(r[1])) * K +
                    static_cast<std::size_t>(r[2]);
    y[c] = r[3];
  }
  for (const auto& r : maskf.rows) {
    std::size_t c = (static_cast<std::size_t>(r[0]) * L + static_cast<std::size_t>(r[1])) * K +
                    static_cast<std::size_t>(r[2]);
    mask[c] = r[3] != 0.0;
  }

  SampleSet set = aggregate(std::move(sample_vals), B, L, K);
  nlohmann::json out;
  auto want = [&](const char* name) {
    return metric_names.empty() ||
           std::find(metric_names.begin(), metric_names.end(), name) != metric_names.end();
  };
  if (want("mse") || want("mae") || want("rmse")) {
    PointMetrics pm = metrics_point(y, set.median, mask);
    if (want("mse")) out["mse"] = pm.mse;
    if (want("mae")) out["mae"] = pm.mae;
    if (want("rmse")) out["rmse"] = pm.rmse;
  }
  if (want("crps") || want("crps_sum")) {
    CrpsResult cr = crps(set, y, mask);
    if (want("crps")) out["crps"] = cr.crps;
    if (want("crps_sum")) out["crps_sum"] = cr.crps_sum;
  }
  std::string text = out.dump(2) + "\n";
  if (out_path.empty() || out_path == "-") {
    std::fputs(text.c_str(), stdout);
  } else {
    write_text(out_path, text);
  }
}

void cmd_physics_demo(const RunConfig& cfg, const std::string& checkpoint_path,
                      const std::string& out_dir) {
  if (!cfg.physics.enabled) {
    throw std::invalid_argument("physics-demo requires a physics section in the config");
  }
  ensure_dir(out_dir);
  DenoiserModel model = load_model_checked(cfg, checkpoint_path);
  Rng base(cfg.training.seed);
  TimeSeriesBatch raw = load_dataset(cfg, base);
  TimeSeriesBatch windows = window_for_model(cfg, std::move(raw));
  auto [data, stats] = maybe_normalize(cfg, std::move(windows));
  if (data.K != cfg.physics.pde.grid_size) {
    throw std::invalid_argument("physics-demo: channels must equal the PDE grid size");
  }
  NoiseSchedule sched = make_schedule(cfg.diffusion.T, cfg.diffusion.beta_start,
                                      cfg.diffusion.beta_end);
  int n = cfg.task_samples();
  Rng trng = base.fork(kStreamTask);

  ConditionTargetSplit s = split(data, block_mask(data.B, data.L, data.K, cfg.task.horizon));
  auto unrefined = ancestral_sample(model, s, sched, n, trng);

  std::size_t per = static_cast<std::size_t>(data.L) * data.K;
  std::vector<std::vector<double>> refined(n);
  std::vector<std::vector<RefineDiagnosticsRow>> diagnostics(
      static_cast<std::size_t>(n) * data.B);
  Rng rbase = trng.fork(0x9e9e);
  parallel_for(n, [&](int si) {
    Rng chain = rbase.fork(static_cast<std::uint64_t>(si));
    refined[si] = unrefined[si];
    for (int b = 0; b < data.B; ++b) {
      std::vector<double> x(unrefined[si].begin() + b * per,
                            unrefined[si].begin() + (b + 1) * per);
      std::vector<RefineDiagnosticsRow>* diag =
          cfg.physics.diagnostics_csv ? &diagnostics[static_cast<std::size_t>(si) * data.B + b]
                                      : nullptr;
      std::vector<double> rx = langevin_refine(x, s, b, cfg.physics.pde, model, sched,
                                               cfg.physics.energy, chain, diag);
      std::copy(rx.begin(), rx.end(), refined[si].begin() + b * per);
    }
  });

  auto mean_abs_k = [&](const std::vector<std::vector<double>>& samples) {
    double acc = 0.0;
    for (const auto& sample : samples) {
      for (int b = 0; b < data.B; ++b) {
        std::vector<double> x(sample.begin() + b * per, sample.begin() + (b + 1) * per);
        acc += std::fabs(pde_residual(x, data.L, data.K, cfg.physics.pde).K_value);
      }
    }
    return acc / (samples.size() * data.B);
  };
  SampleSet set_u = aggregate(unrefined, data.B, data.L, data.K);
  SampleSet set_r = aggregate(refined, data.B, data.L, data.K);
  PointMetrics mse_u = metrics_point(data.values, set_u.median, s.tar_mask);
  PointMetrics mse_r = metrics_point(data.values, set_r.median, s.tar_mask);

  nlohmann::json summary = {
      {"pde", cfg.physics.pde.family_name()},
      {"samples", n},
      {"mean_abs_K_unrefined", mean_abs_k(set_u.samples)},
      {"mean_abs_K_refined", mean_abs_k(set_r.samples)},
      {"mse_unrefined", mse_u.mse},
      {"mse_refined", mse_r.mse},
      {"iters", cfg.physics.energy.iters},
      {"alpha", cfg.physics.energy.alpha},
      {"step", cfg.physics.energy.step},
  };
  write_text(out_dir + "/physics_summary.json", summary.dump(2) + "\n");
  write_samples_csv(out_dir + "/refined_samples.csv", set_r);
  write_samples_csv(out_dir + "/unrefined_samples.csv", set_u);

  if (cfg.physics.diagnostics_csv) {
    std::string out = "sample,element,iter,K,grad_K_norm,grad_logp_norm\n";
    for (int si = 0; si < n; ++si) {
      for (int b = 0; b < data.B; ++b) {
        for (const auto& row : diagnostics[static_cast<std::size_t>(si) * data.B + b]) {
          out += std::to_string(si) + "," + std::to_string(b) + "," + std::to_string(row.iter) +
                 "," + fmt(row.K_value) + "," + fmt(row.grad_K_norm) + "," +
                 fmt(row.grad_logp_norm) + "\n";
        }
      }
    }
    write_text(out_dir + "/refine_diagnostics.csv", out);
  }
}

void cmd_gen_data(const RunConfig& cfg, const std::string& out_path, const std::string& format) {
  Rng base(cfg.training.seed);
  TimeSeriesBatch batch = load_dataset(cfg, base);
  if (format == "csv") {
    // one file per instance, the shared wide layout
    for (int b = 0; b < batch.B; ++b) {
      std::string path = batch.B == 1
                             ? out_path
                             : out_path + "." + std::to_string(b) + ".csv";
      write_csv(path, batch, b);
    }
  } else if (format == "jsonl") {
    std::string out;
    for (int b = 0; b < batch.B; ++b) {
      nlohmann::ordered_json j;
      std::vector<double> t(batch.L);
      for (int l = 0; l < batch.L; ++l) {
        t[l] = batch.time_index[static_cast<std::size_t>(b) * batch.L + l];
      }
      j["t"] = t;
      nlohmann::ordered_json channels;
      for (int k = 0; k < batch.K; ++k) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (int l = 0; l < batch.L; ++l) {
          if (batch.observed(b, l, k)) {
            arr.push_back(batch.val(b, l, k));
          } else {
            arr.push_back(nullptr);
          }
        }
        channels["c" + std::to_string(k)] = arr;
      }
      j["channels"] = channels;
      out += j.dump() + "\n";
    }
    write_text(out_path, out);
  } else {
    throw std::invalid_argument("gen-data: format must be csv or jsonl");
  }
}

}  // namespace timedit
