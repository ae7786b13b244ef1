#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "timedit/diffusion.hpp"
#include "timedit/mask.hpp"
#include "timedit/pde.hpp"
#include "timedit/rng.hpp"

namespace timedit {

struct EnergyConfig {
  double alpha = 1.0;        // likelihood weight
  double step = 1e-3;        // Langevin step size
  int iters = 50;            // refinement iterations (0 = no-op)
  int logp_mc_samples = 4;   // (t, eps) draws per likelihood-gradient estimate
  double t_band_frac = 0.1;  // t drawn from [1, T * frac] unless full_range_t
  bool full_range_t = false;
  double divergence_bound = 1e3;  // abort when |x| exceeds this
  std::uint64_t seed = 0;

  void validate() const;
};

// Squared-residual consistency of a trajectory with its PDE. K <= 0 always;
// K = 0 iff the discrete equations hold exactly.
struct ResidualField {
  int L = 0, K = 0;
  std::vector<double> cell_sq;  // per-cell squared residual, L*K
  double K_value = 0.0;         // -sum(cell_sq)
};

// Trajectory layout matches the PDE solver output: channels are spatial
// points, time along L. Time derivative by forward differences (one-sided at
// the final row), spatial derivatives by central differences with periodic
// wrap, F evaluated at the left time endpoint.
ResidualField pde_residual(const std::vector<double>& x, int L, int K, const PdeSpec& spec);

// Exact gradient of K through the stencils (hand-assembled adjoint).
std::vector<double> residual_gradient(const std::vector<double>& x, int L, int K,
                                      const PdeSpec& spec);

// Same gradient through the substrate tape; cross-checks the adjoint.
std::vector<double> residual_gradient_autodiff(const std::vector<double>& x, int L, int K,
                                               const PdeSpec& spec);

// Monte-Carlo estimate of grad log p(x_tar | x_con) via the denoising
// objective; entries outside tar_mask are zero.
std::vector<double> logp_gradient(Denoiser& model, const std::vector<double>& x_tar,
                                  const ConditionTargetSplit& split, int b,
                                  const NoiseSchedule& sched, const EnergyConfig& cfg, Rng& rng);

// Generic Langevin chain x <- x + step * grad_energy(x) + sqrt(2 step) N(0,I)
// over the cells where update_mask is nonzero (null = all cells).
void langevin_chain(std::vector<double>& x, const std::function<void(const std::vector<double>&, std::vector<double>&)>& grad_energy,
                    double step, int iters, Rng& rng,
                    const std::uint8_t* update_mask = nullptr, double divergence_bound = 1e3);

struct RefineDiagnosticsRow {
  int iter = 0;
  double K_value = 0.0;
  double grad_K_norm = 0.0;
  double grad_logp_norm = 0.0;
};

// Algorithm lines 6-8: k Langevin updates of the target cells of one
// completed sample under E = K + alpha log p. Condition cells and invalid
// channels are untouched. Throws on divergence.
std::vector<double> langevin_refine(const std::vector<double>& x_completed,
                                    const ConditionTargetSplit& split, int b,
                                    const PdeSpec& spec, Denoiser& model,
                                    const NoiseSchedule& sched, const EnergyConfig& cfg,
                                    Rng& rng,
                                    std::vector<RefineDiagnosticsRow>* diagnostics = nullptr);

struct BoltzmannReport {
  bool passed = false;
  double objective_at_q = 0.0;
  double best_perturbed = 0.0;
  // Gibbs variational objective E_q[K + alpha log p] + H(q); coincides with
  // the KL-regularized objective at alpha = 1.
  double eq9_objective_at_q = 0.0;  // E_q[K] - alpha KL(q || p)
};

// Builds q* proportional to p^alpha exp(K) and verifies it attains the
// maximum of the energy-form objective against random perturbed
// distributions.
BoltzmannReport verify_boltzmann_optimum(const std::vector<double>& p,
                                         const std::vector<double>& K, double alpha,
                                         int n_perturbations, Rng& rng);

}  // namespace timedit
