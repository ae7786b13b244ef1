#pragma once

#include <string>
#include <vector>

#include "timedit/rng.hpp"
#include "timedit/series.hpp"

namespace timedit {

// 1D PDE on a periodic grid; channels are spatial points, time runs along L.
struct PdeSpec {
  enum class Family { advection, burgers, diffusion_reaction };
  Family family = Family::advection;
  double c = 1.0;   // advection speed
  double nu = 0.1;  // burgers viscosity
  double D = 1.0;   // diffusion coefficient
  double k = 0.1;   // linear reaction rate (R(u) = -k u)
  double dx = 0.0625;
  double dt = 0.01;
  int grid_size = 16;
  double blowup_bound = 1e6;

  // Throws unless the reference solver's stability bounds hold:
  // advection c dt/dx <= 1, diffusive terms (nu or D) dt/dx^2 <= 0.5.
  void validate() const;

  static Family family_from_string(const std::string& s);
  const char* family_name() const;
};

struct IcConfig {
  int max_components = 3;   // peaks or sine modes
  double amp_lo = 0.4;
  double amp_hi = 1.2;
  double width_lo = 0.08;   // gaussian width, fraction of the domain
  double width_hi = 0.20;
};

// Randomly placed Gaussian peaks (advection / diffusion-reaction initial data).
std::vector<double> ic_gaussian_peaks(const PdeSpec& spec, Rng& rng, const IcConfig& cfg = {});
// Random mixture of sine waves (burgers initial data).
std::vector<double> ic_sine_mixture(const PdeSpec& spec, Rng& rng, const IcConfig& cfg = {});

// Method-of-lines trajectory with forward-Euler time stepping and periodic
// boundaries: upwind convection, central diffusion, linear reaction. Returns
// a single-instance batch of steps+1 rows. Throws on blow-up.
TimeSeriesBatch solve_pde(const PdeSpec& spec, const std::vector<double>& initial, int steps);

// Batch of independently initialized trajectories.
TimeSeriesBatch gen_pde_dataset(const PdeSpec& spec, int n, int steps, Rng& rng,
                                const IcConfig& cfg = {});

}  // namespace timedit
