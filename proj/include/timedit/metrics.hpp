#pragma once

#include <cstdint>
#include <vector>

#include "timedit/diffusion.hpp"
#include "timedit/rng.hpp"

namespace timedit {

struct PointMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

// Formulas over masked cells only. Throws on an empty mask.
PointMetrics metrics_point(const std::vector<double>& y, const std::vector<double>& yhat,
                           const std::vector<std::uint8_t>& mask);

// Quantile loss 2 * Lambda_a(q, z) averaged over `levels` equispaced quantile
// levels i/(levels+1) of the empirical sample distribution.
double crps_discretized(std::vector<double> samples, double x, int levels);

struct CrpsResult {
  double crps = 0.0;      // sum of per-cell CRPS over masked cells / sum |x|
  double crps_sum = 0.0;  // same for the channel-summed series
};

CrpsResult crps(const SampleSet& set, const std::vector<double>& y,
                const std::vector<std::uint8_t>& mask);

// For every maximal contiguous true-anomaly segment containing at least one
// raw detection, the entire segment counts as detected; elsewhere unchanged.
std::vector<std::uint8_t> point_adjust(const std::vector<std::uint8_t>& raw_labels,
                                       const std::vector<std::uint8_t>& true_labels);

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // no positives anywhere
};

Prf1 prf1(const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& truth);

struct ScoreConfig {
  int hidden = 32;
  int layers = 2;
  int train_steps = 500;
  int batch_size = 32;
  double lr = 1e-3;
  double train_fraction = 0.8;
};

// |held-out accuracy - 0.5| of a 2-layer gated recurrent classifier trained
// to separate real from synthetic windows (0 is best). Windows are B*L*K
// flat arrays; real and synthetic counts must match.
double discriminative_score(const std::vector<std::vector<double>>& real_windows,
                            const std::vector<std::vector<double>>& synth_windows, int L, int K,
                            Rng& rng, const ScoreConfig& cfg = {});

// MAE of a one-step-ahead recurrent predictor trained on synthetic windows
// and evaluated on held-out real windows.
double predictive_score(const std::vector<std::vector<double>>& real_windows,
                        const std::vector<std::vector<double>>& synth_windows, int L, int K,
                        Rng& rng, const ScoreConfig& cfg = {});

}  // namespace timedit
