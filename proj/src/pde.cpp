#include "timedit/pde.hpp"

#include <cmath>
#include <stdexcept>

namespace timedit {

namespace {
constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
}

void PdeSpec::validate() const {
  if (grid_size < 3) throw std::invalid_argument("PdeSpec: grid_size must be >= 3");
  if (dx <= 0 || dt <= 0) throw std::invalid_argument("PdeSpec: dx and dt must be positive");
  double diffusive = 0.0;
  if (family == Family::advection) {
    if (std::fabs(c) * dt / dx > 1.0 + 1e-12) {
      throw std::invalid_argument("PdeSpec: advection CFL violated (c dt/dx > 1)");
    }
  } else if (family == Family::burgers) {
    diffusive = nu;
  } else {
    diffusive = D;
  }
  if (diffusive * dt / (dx * dx) > 0.5 + 1e-12) {
    throw std::invalid_argument("PdeSpec: diffusive stability violated (coef dt/dx^2 > 0.5)");
  }
}

PdeSpec::Family PdeSpec::family_from_string(const std::string& s) {
  if (s == "advection") return Family::advection;
  if (s == "burgers") return Family::burgers;
  if (s == "diffusion_reaction") return Family::diffusion_reaction;
  throw std::invalid_argument("unknown PDE family: " + s);
}

const char* PdeSpec::family_name() const {
  switch (family) {
    case Family::advection: return "advection";
    case Family::burgers: return "burgers";
    default: return "diffusion_reaction";
  }
}

std::vector<double> ic_gaussian_peaks(const PdeSpec& spec, Rng& rng, const IcConfig& cfg) {
  int nx = spec.grid_size;
  double domain = nx * spec.dx;
  int n_peaks = rng.uniform_int(1, cfg.max_components);
  std::vector<double> u(nx, 0.0);
  for (int p = 0; p < n_peaks; ++p) {
    double amp = rng.uniform(cfg.amp_lo, cfg.amp_hi);
    double center = rng.uniform(0.0, domain);
    double width = rng.uniform(cfg.width_lo, cfg.width_hi) * domain;
    for (int i = 0; i < nx; ++i) {
      double x = i * spec.dx;
      double d = std::fabs(x - center);
      d = std::min(d, domain - d);  // periodic distance
      u[i] += amp * std::exp(-0.5 * d * d / (width * width));
    }
  }
  return u;
}

std::vector<double> ic_sine_mixture(const PdeSpec& spec, Rng& rng, const IcConfig& cfg) {
  int nx = spec.grid_size;
  double domain = nx * spec.dx;
  int n_modes = rng.uniform_int(1, cfg.max_components);
  std::vector<double> u(nx, 0.0);
  for (int m = 0; m < n_modes; ++m) {
    int wavenumber = rng.uniform_int(1, 3);
    double amp = rng.uniform(cfg.amp_lo, cfg.amp_hi) / wavenumber;
    double phase = rng.uniform(0.0, kTwoPi);
    for (int i = 0; i < nx; ++i) {
      double x = i * spec.dx;
      u[i] += amp * std::sin(kTwoPi * wavenumber * x / domain + phase);
    }
  }
  return u;
}

namespace {

// Solver right-hand side du/dt = F(u): upwind convection, central diffusion.
void solver_rhs(const PdeSpec& spec, const std::vector<double>& u, std::vector<double>& rhs) {
  int nx = spec.grid_size;
  for (int i = 0; i < nx; ++i) {
    int im = (i + nx - 1) % nx;
    int ip = (i + 1) % nx;
    switch (spec.family) {
      case PdeSpec::Family::advection: {
        double dudx = spec.c >= 0 ? (u[i] - u[im]) / spec.dx : (u[ip] - u[i]) / spec.dx;
        rhs[i] = -spec.c * dudx;
        break;
      }
      case PdeSpec::Family::burgers: {
        double a = u[i];
        double dudx = a >= 0 ? (u[i] - u[im]) / spec.dx : (u[ip] - u[i]) / spec.dx;
        double lap = (u[ip] - 2.0 * u[i] + u[im]) / (spec.dx * spec.dx);
        rhs[i] = -a * dudx + spec.nu * lap;
        break;
      }
      case PdeSpec::Family::diffusion_reaction: {
        double lap = (u[ip] - 2.0 * u[i] + u[im]) / (spec.dx * spec.dx);
        rhs[i] = spec.D * lap - spec.k * u[i];
        break;
      }
    }
  }
}

}  // namespace

TimeSeriesBatch solve_pde(const PdeSpec& spec, const std::vector<double>& initial, int steps) {
  spec.validate();
  if (static_cast<int>(initial.size()) != spec.grid_size) {
    throw std::invalid_argument("solve_pde: initial condition does not match grid_size");
  }
  if (steps < 1) throw std::invalid_argument("solve_pde: steps must be >= 1");
  int nx = spec.grid_size;
  TimeSeriesBatch out = TimeSeriesBatch::make(1, steps + 1, nx);
  std::vector<double> u = initial;
  std::vector<double> rhs(nx);
  for (int i = 0; i < nx; ++i) out.values[out.idx(0, 0, i)] = u[i];
  out.time_index[0] = 0.0;
  for (int n = 1; n <= steps; ++n) {
    solver_rhs(spec, u, rhs);
    for (int i = 0; i < nx; ++i) {
      u[i] += spec.dt * rhs[i];
      if (!(std::fabs(u[i]) <= spec.blowup_bound)) {
        throw std::runtime_error("solve_pde: instability detected (|u| exceeded bound at step " +
                                 std::to_string(n) + ")");
      }
      out.values[out.idx(0, n, i)] = u[i];
    }
    out.time_index[n] = n * spec.dt;
  }
  return out;
}

TimeSeriesBatch gen_pde_dataset(const PdeSpec& spec, int n, int steps, Rng& rng,
                                const IcConfig& cfg) {
  if (n < 1) throw std::invalid_argument("gen_pde_dataset: n must be >= 1");
  TimeSeriesBatch out = TimeSeriesBatch::make(n, steps + 1, spec.grid_size);
  for (int b = 0; b < n; ++b) {
    std::vector<double> u0 = spec.family == PdeSpec::Family::burgers
                                 ? ic_sine_mixture(spec, rng, cfg)
                                 : ic_gaussian_peaks(spec, rng, cfg);
    TimeSeriesBatch traj = solve_pde(spec, u0, steps);
    for (int l = 0; l <= steps; ++l) {
      out.time_index[static_cast<std::size_t>(b) * (steps + 1) + l] = traj.time_index[l];
      for (int k = 0; k < spec.grid_size; ++k) {
        out.values[out.idx(b, l, k)] = traj.val(0, l, k);
      }
    }
  }
  return out;
}

}  // namespace timedit
