#pragma once

#include <cstdint>
#include <vector>

#include "timedit/mask.hpp"
#include "timedit/rng.hpp"
#include "timedit/tensor.hpp"

namespace timedit {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // length T, in (0, 1)
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running products, strictly decreasing

  // 1-based diffusion step accessors (step t uses index t-1).
  double beta_at(int t) const { return beta[t - 1]; }
  double alpha_at(int t) const { return alpha[t - 1]; }
  double alpha_bar_at(int t) const { return alpha_bar[t - 1]; }
};

NoiseSchedule make_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

struct DiffusionSample {
  std::vector<double> x_t;  // B*L*K; condition cells carry clean values
  std::vector<int> t;       // per batch element, in [1, T]
  std::vector<double> eps;  // B*L*K; zero outside the target
};

// Closed-form forward corruption x_t = sqrt(abar) x0 + sqrt(1-abar) eps,
// applied only where tar_mask = 1; condition cells keep their clean values.
DiffusionSample forward_sample(const ConditionTargetSplit& split, const std::vector<int>& t,
                               const NoiseSchedule& sched, Rng& rng);

// Per-element masks the denoiser needs alongside the combined input values.
struct ElementView {
  int L = 0, K = 0;
  const std::uint8_t* con_mask = nullptr;       // L*K
  const std::uint8_t* tar_mask = nullptr;       // L*K
  const std::uint8_t* channel_valid = nullptr;  // K
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  // Full-shape noise prediction for one batch element. `x_full` is L x K:
  // clean condition values at con cells, noised target values at tar cells,
  // zeros elsewhere. Differentiable when inputs carry gradients.
  virtual Tensor predict_eps(const Tensor& x_full, int t, const ElementView& view) = 0;
};

ElementView element_view(const ConditionTargetSplit& split, int b);

// Fixed (t, eps) draws so tests and gradient checks can pin the loss.
struct ForwardDraws {
  std::vector<int> t;        // per element
  std::vector<double> eps;   // B*L*K
};

// Mean squared error between predicted and true noise over target cells,
// t drawn uniformly per element. Returns the scalar loss tensor.
Tensor training_loss(Denoiser& model, const ConditionTargetSplit& split,
                     const NoiseSchedule& sched, Rng& rng, const ForwardDraws* fixed = nullptr);

// Reverse-process loop restricted to target cells; condition cells are
// re-imposed and invalid channels zeroed at every step. Returns n_chains
// completed value arrays (B*L*K each). Chains use independent RNG streams
// and may run in parallel.
std::vector<std::vector<double>> ancestral_sample(Denoiser& model,
                                                  const ConditionTargetSplit& split,
                                                  const NoiseSchedule& sched, int n_chains,
                                                  Rng& rng);

struct SampleSet {
  static constexpr int kLevels = 19;  // quantile levels 0.05 .. 0.95
  int n = 0, B = 0, L = 0, K = 0;
  std::vector<std::vector<double>> samples;  // n arrays of B*L*K
  std::vector<double> median;                // B*L*K
  std::vector<double> quantiles;             // B*L*K*kLevels, monotone per cell

  std::size_t cell(int b, int l, int k) const {
    return (static_cast<std::size_t>(b) * L + l) * K + k;
  }
  double quantile(int b, int l, int k, int level) const {
    return quantiles[cell(b, l, k) * kLevels + level];
  }
};

// Per-cell median and empirical quantiles (linear interpolation between
// order statistics) at the 19 evaluation levels.
SampleSet aggregate(std::vector<std::vector<double>> samples, int B, int L, int K);

}  // namespace timedit
