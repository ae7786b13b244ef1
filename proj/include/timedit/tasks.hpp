#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "timedit/diffusion.hpp"
#include "timedit/mask.hpp"
#include "timedit/metrics.hpp"
#include "timedit/physics.hpp"
#include "timedit/series.hpp"

namespace timedit {

struct SrConfig {
  int q_window = 3;     // averaging-filter length over the log-amplitude spectrum
  int n_neighbor = 2;   // neighbors concealed on each side of a flagged point
  double top_fraction = 0.01;  // fraction of points flagged as most salient
};

// Spectral-residual saliency of a univariate series: the series is
// mean-removed, the log-amplitude spectrum smoothed with a length-q moving
// average, and the residual spectrum inverted with the original phase.
// Zero-amplitude bins are epsilon-floored inside the log average and
// reconstruct to zero amplitude.
std::vector<double> sr_transform(const std::vector<double>& series, const SrConfig& cfg);

// Marks the top-saliency points (and n_neighbor neighbors) of every channel
// as unobserved. Applied to the in-domain training data so the model does not
// learn to reproduce suspected anomalies.
TimeSeriesBatch sr_conceal(const TimeSeriesBatch& series, const SrConfig& cfg);

// Optional physics-informed refinement of the sampled targets.
struct RefineSpec {
  PdeSpec pde;
  EnergyConfig energy;
};

struct TaskResult {
  SampleSet samples;
  ConditionTargetSplit split;  // masks used, for metric computation
};

// Block mask of length `horizon` over the batch tail, n sampling chains,
// median aggregation; optional Langevin refinement of every sample.
TaskResult forecast(Denoiser& model, const TimeSeriesBatch& batch, int horizon, int n,
                    const NoiseSchedule& sched, Rng& rng,
                    const std::optional<RefineSpec>& refine = std::nullopt);

// Sampling under a caller-supplied mask (cells with mask 0 are imputed).
TaskResult impute(Denoiser& model, const TimeSeriesBatch& batch, const TaskMask& target_mask,
                  int n, const NoiseSchedule& sched, Rng& rng);

// Unconditional synthesis of `count` sequences of shape L x K.
TaskResult generate(Denoiser& model, int count, int L, int K, int n, const NoiseSchedule& sched,
                    Rng& rng);

struct AnomalyResult {
  std::vector<double> score;  // per-timestep reconstruction error
  double threshold = 0.0;
  double percentile = 99.0;
  std::vector<std::uint8_t> raw_labels;
  std::vector<std::uint8_t> adjusted_labels;  // filled by evaluate_anomalies
};

// Reconstruction-mask sampling over consecutive windows; the score is the
// per-timestep mean squared error across channels between the median
// reconstruction and the input, thresholded at the given percentile of the
// evaluation split. `cfg` records the spectral-residual concealment protocol
// used when the in-domain model was trained (see sr_conceal); the windows
// here are reconstructed fully.
AnomalyResult detect_anomalies(Denoiser& model, const TimeSeriesBatch& series, int window,
                               double percentile, const SrConfig& cfg, int n,
                               const NoiseSchedule& sched, Rng& rng);

// Applies the point-adjustment protocol against ground truth and fills
// adjusted_labels; returns the resulting precision/recall/F1.
Prf1 evaluate_anomalies(AnomalyResult& result, const std::vector<std::uint8_t>& truth);

}  // namespace timedit
