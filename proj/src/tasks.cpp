#include "timedit/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "timedit/parallel.hpp"

namespace timedit {

namespace {
constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
}

std::vector<double> sr_transform(const std::vector<double>& series, const SrConfig& cfg) {
  int L = static_cast<int>(series.size());
  if (L == 0) throw std::invalid_argument("sr_transform: zero-length input");
  if (cfg.q_window < 1 || L < cfg.q_window) {
    throw std::invalid_argument("sr_transform: series shorter than the averaging window");
  }
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= L;

  // DFT (direct evaluation; window lengths here stay modest)
  std::vector<double> re(L, 0.0), im(L, 0.0);
  for (int f = 0; f < L; ++f) {
    double sr = 0.0, si = 0.0;
    for (int t = 0; t < L; ++t) {
      double x = series[t] - mean;
      double a = -kTwoPi * f * t / L;
      sr += x * std::cos(a);
      si += x * std::sin(a);
    }
    re[f] = sr;
    im[f] = si;
  }

  std::vector<double> amp(L), phase(L);
  double amp_max = 0.0;
  for (int f = 0; f < L; ++f) {
    amp[f] = std::hypot(re[f], im[f]);
    phase[f] = std::atan2(im[f], re[f]);
    amp_max = std::max(amp_max, amp[f]);
  }
  if (amp_max == 0.0) return std::vector<double>(L, 0.0);

  double floor = 1e-8 * amp_max;
  std::vector<double> log_amp(L);
  for (int f = 0; f < L; ++f) log_amp[f] = std::log(std::max(amp[f], floor));

  // centered moving average, clamped at the boundaries
  std::vector<double> avg(L);
  int half = cfg.q_window / 2;
  for (int f = 0; f < L; ++f) {
    int lo = std::max(0, f - half);
    int hi = std::min(L - 1, f + half);
    double s = 0.0;
    for (int g = lo; g <= hi; ++g) s += log_amp[g];
    avg[f] = s / (hi - lo + 1);
  }

  // residual spectrum with the original phase; true zero bins stay zero
  std::vector<double> rr(L), ri(L);
  for (int f = 0; f < L; ++f) {
    double mag = amp[f] * std::exp(-avg[f]);
    rr[f] = mag * std::cos(phase[f]);
    ri[f] = mag * std::sin(phase[f]);
  }

  std::vector<double> saliency(L);
  for (int t = 0; t < L; ++t) {
    double sr = 0.0, si = 0.0;
    for (int f = 0; f < L; ++f) {
      double a = kTwoPi * f * t / L;
      double c = std::cos(a), s = std::sin(a);
      sr += rr[f] * c - ri[f] * s;
      si += rr[f] * s + ri[f] * c;
    }
    saliency[t] = std::hypot(sr / L, si / L);
  }
  return saliency;
}

TimeSeriesBatch sr_conceal(const TimeSeriesBatch& series, const SrConfig& cfg) {
  TimeSeriesBatch out = series;
  for (int b = 0; b < series.B; ++b) {
    for (int k = 0; k < series.K; ++k) {
      if (!series.valid_channel(b, k)) continue;
      std::vector<double> channel(series.L);
      for (int l = 0; l < series.L; ++l) channel[l] = series.val(b, l, k);
      std::vector<double> sal = sr_transform(channel, cfg);
      int n_flag = std::max(1, static_cast<int>(std::ceil(series.L * cfg.top_fraction)));
      std::vector<int> order(series.L);
      for (int l = 0; l < series.L; ++l) order[l] = l;
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int c) { return sal[a] > sal[c]; });
      for (int i = 0; i < n_flag; ++i) {
        int center = order[i];
        for (int d = -cfg.n_neighbor; d <= cfg.n_neighbor; ++d) {
          int l = center + d;
          if (l < 0 || l >= series.L) continue;
          out.obs_mask[out.idx(b, l, k)] = 0;
          out.values[out.idx(b, l, k)] = 0.0;
        }
      }
    }
  }
  return out;
}

namespace {

TaskResult run_task(Denoiser& model, const ConditionTargetSplit& split, int n,
                    const NoiseSchedule& sched, Rng& rng,
                    const std::optional<RefineSpec>& refine) {
  auto samples = ancestral_sample(model, split, sched, n, rng);
  if (refine) {
    std::size_t per = static_cast<std::size_t>(split.L) * split.K;
    Rng base = rng.fork(0x9e9e);
    parallel_for(n, [&](int s) {
      Rng chain = base.fork(static_cast<std::uint64_t>(s));
      for (int b = 0; b < split.B; ++b) {
        std::vector<double> x(samples[s].begin() + b * per, samples[s].begin() + (b + 1) * per);
        std::vector<double> refined =
            langevin_refine(x, split, b, refine->pde, model, sched, refine->energy, chain);
        std::copy(refined.begin(), refined.end(), samples[s].begin() + b * per);
      }
    });
  }
  TaskResult res;
  res.samples = aggregate(std::move(samples), split.B, split.L, split.K);
  res.split = split;
  return res;
}

}  // namespace

TaskResult forecast(Denoiser& model, const TimeSeriesBatch& batch, int horizon, int n,
                    const NoiseSchedule& sched, Rng& rng,
                    const std::optional<RefineSpec>& refine) {
  if (horizon < 1 || horizon > batch.L - 1) {
    throw std::invalid_argument("forecast: horizon must be in [1, L-1]");
  }
  if (n < 1) throw std::invalid_argument("forecast: n must be >= 1");
  ConditionTargetSplit s = split(batch, block_mask(batch.B, batch.L, batch.K, horizon));
  // empty history means nothing to condition on
  std::size_t con = 0;
  for (auto v : s.con_mask) con += v;
  if (con == 0) throw std::invalid_argument("forecast: empty history");
  return run_task(model, s, n, sched, rng, refine);
}

TaskResult impute(Denoiser& model, const TimeSeriesBatch& batch, const TaskMask& target_mask,
                  int n, const NoiseSchedule& sched, Rng& rng) {
  if (n < 1) throw std::invalid_argument("impute: n must be >= 1");
  ConditionTargetSplit s = split(batch, target_mask);  // throws when nothing to impute
  return run_task(model, s, n, sched, rng, std::nullopt);
}

TaskResult generate(Denoiser& model, int count, int L, int K, int n, const NoiseSchedule& sched,
                    Rng& rng) {
  TimeSeriesBatch blank = TimeSeriesBatch::make(count, L, K);
  ConditionTargetSplit s = split(blank, reconstruction_mask(count, L, K));
  return run_task(model, s, n, sched, rng, std::nullopt);
}

AnomalyResult detect_anomalies(Denoiser& model, const TimeSeriesBatch& series, int window,
                               double percentile, const SrConfig& cfg, int n,
                               const NoiseSchedule& sched, Rng& rng) {
  if (series.B != 1) throw std::invalid_argument("detect_anomalies: single series expected");
  if (window < 2 || window > series.L) {
    throw std::invalid_argument("detect_anomalies: window longer than series (or too short)");
  }
  if (percentile <= 0.0 || percentile >= 100.0) {
    throw std::invalid_argument("detect_anomalies: percentile must be in (0, 100)");
  }
  if (cfg.q_window < 1) throw std::invalid_argument("detect_anomalies: bad SR config");

  AnomalyResult res;
  res.percentile = percentile;
  res.score.assign(series.L, 0.0);
  std::vector<int> covered(series.L, 0);

  int n_windows = series.L / window;
  std::vector<std::vector<double>> medians(n_windows);
  parallel_for(n_windows, [&](int w) {
    int l0 = w * window;
    TimeSeriesBatch piece = TimeSeriesBatch::make(1, window, series.K);
    piece.channel_valid = series.channel_valid;
    for (int l = 0; l < window; ++l) {
      piece.time_index[l] = series.time_index[l0 + l];
      for (int k = 0; k < series.K; ++k) {
        piece.values[piece.idx(0, l, k)] = series.val(0, l0 + l, k);
        piece.obs_mask[piece.idx(0, l, k)] = series.obs_mask[series.idx(0, l0 + l, k)];
      }
    }
    piece.enforce_invariants();
    ConditionTargetSplit s = split(piece, reconstruction_mask(1, window, series.K));
    Rng wrng = rng.fork(0xA0000 + static_cast<std::uint64_t>(w));
    auto samples = ancestral_sample(model, s, sched, n, wrng);
    SampleSet set = aggregate(std::move(samples), 1, window, series.K);
    medians[w] = std::move(set.median);
  });

  for (int w = 0; w < n_windows; ++w) {
    int l0 = w * window;
    for (int l = 0; l < window; ++l) {
      double se = 0.0;
      int cnt = 0;
      for (int k = 0; k < series.K; ++k) {
        if (!series.valid_channel(0, k)) continue;
        double d = medians[w][static_cast<std::size_t>(l) * series.K + k] -
                   series.val(0, l0 + l, k);
        se += d * d;
        ++cnt;
      }
      res.score[l0 + l] = cnt > 0 ? se / cnt : 0.0;
      covered[l0 + l] = 1;
    }
  }

  // threshold over the scored portion of the evaluation split
  std::vector<double> scored;
  scored.reserve(series.L);
  for (int l = 0; l < series.L; ++l) {
    if (covered[l]) scored.push_back(res.score[l]);
  }
  std::sort(scored.begin(), scored.end());
  double h = percentile / 100.0 * (scored.size() - 1);
  std::size_t lo = static_cast<std::size_t>(h);
  double wgt = h - lo;
  res.threshold = lo + 1 < scored.size() ? scored[lo] + wgt * (scored[lo + 1] - scored[lo])
                                         : scored.back();

  res.raw_labels.assign(series.L, 0);
  for (int l = 0; l < series.L; ++l) {
    if (covered[l] && res.score[l] > res.threshold) res.raw_labels[l] = 1;
  }
  return res;
}

Prf1 evaluate_anomalies(AnomalyResult& result, const std::vector<std::uint8_t>& truth) {
  result.adjusted_labels = point_adjust(result.raw_labels, truth);
  return prf1(result.adjusted_labels, truth);
}

}  // namespace timedit
