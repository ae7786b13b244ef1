#include "timedit/physics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace timedit {

void EnergyConfig::validate() const {
  if (alpha < 0.0) throw std::invalid_argument("EnergyConfig: alpha must be >= 0");
  if (step <= 0.0) throw std::invalid_argument("EnergyConfig: step must be positive");
  if (iters < 0) throw std::invalid_argument("EnergyConfig: iters must be >= 0");
  if (logp_mc_samples < 1) throw std::invalid_argument("EnergyConfig: logp_mc_samples >= 1");
  if (t_band_frac <= 0.0 || t_band_frac > 1.0) {
    throw std::invalid_argument("EnergyConfig: t_band_frac must be in (0, 1]");
  }
}

namespace {

// F(u) with central spatial differences and periodic wrap, one row.
void central_rhs(const PdeSpec& spec, const double* u, int nx, double* f) {
  double inv2dx = 1.0 / (2.0 * spec.dx);
  double invdx2 = 1.0 / (spec.dx * spec.dx);
  for (int i = 0; i < nx; ++i) {
    int im = (i + nx - 1) % nx;
    int ip = (i + 1) % nx;
    double ux = (u[ip] - u[im]) * inv2dx;
    double lap = (u[ip] - 2.0 * u[i] + u[im]) * invdx2;
    switch (spec.family) {
      case PdeSpec::Family::advection: f[i] = -spec.c * ux; break;
      case PdeSpec::Family::burgers: f[i] = -u[i] * ux + spec.nu * lap; break;
      case PdeSpec::Family::diffusion_reaction: f[i] = spec.D * lap - spec.k * u[i]; break;
    }
  }
}

// dF_i/du at the stencil points (center, plus, minus), one row.
void central_rhs_jacobian(const PdeSpec& spec, const double* u, int i, int nx, double& d_center,
                          double& d_plus, double& d_minus) {
  double inv2dx = 1.0 / (2.0 * spec.dx);
  double invdx2 = 1.0 / (spec.dx * spec.dx);
  int im = (i + nx - 1) % nx;
  int ip = (i + 1) % nx;
  switch (spec.family) {
    case PdeSpec::Family::advection:
      d_center = 0.0;
      d_plus = -spec.c * inv2dx;
      d_minus = spec.c * inv2dx;
      break;
    case PdeSpec::Family::burgers:
      d_center = -(u[ip] - u[im]) * inv2dx - 2.0 * spec.nu * invdx2;
      d_plus = -u[i] * inv2dx + spec.nu * invdx2;
      d_minus = u[i] * inv2dx + spec.nu * invdx2;
      break;
    case PdeSpec::Family::diffusion_reaction:
      d_center = -2.0 * spec.D * invdx2 - spec.k;
      d_plus = spec.D * invdx2;
      d_minus = spec.D * invdx2;
      break;
  }
}

}  // namespace

ResidualField pde_residual(const std::vector<double>& x, int L, int K, const PdeSpec& spec) {
  if (K != spec.grid_size) {
    throw std::invalid_argument("pde_residual: trajectory channels do not match the PDE grid");
  }
  if (L < 3) throw std::invalid_argument("pde_residual: need at least 3 time steps");
  if (x.size() != static_cast<std::size_t>(L) * K) {
    throw std::invalid_argument("pde_residual: value count does not match L*K");
  }
  ResidualField out;
  out.L = L;
  out.K = K;
  out.cell_sq.assign(x.size(), 0.0);
  std::vector<double> f(K);
  double inv_dt = 1.0 / spec.dt;
  double total = 0.0;
  for (int n = 0; n < L; ++n) {
    // forward difference; one-sided (backward) at the final step, with F
    // evaluated at the same row the time derivative is anchored to
    int eval = n < L - 1 ? n : L - 1;
    const double* u = x.data() + static_cast<std::size_t>(eval) * K;
    central_rhs(spec, u, K, f.data());
    for (int i = 0; i < K; ++i) {
      double dudt = n < L - 1
                        ? (x[static_cast<std::size_t>(n + 1) * K + i] -
                           x[static_cast<std::size_t>(n) * K + i]) *
                              inv_dt
                        : (x[static_cast<std::size_t>(L - 1) * K + i] -
                           x[static_cast<std::size_t>(L - 2) * K + i]) *
                              inv_dt;
      double r = dudt - f[i];
      out.cell_sq[static_cast<std::size_t>(n) * K + i] = r * r;
      total += r * r;
    }
  }
  out.K_value = -total;
  return out;
}

std::vector<double> residual_gradient(const std::vector<double>& x, int L, int K,
                                      const PdeSpec& spec) {
  // dK/dx = -2 sum_r r * dr/dx, assembled by scattering each residual's
  // stencil contributions
  if (K != spec.grid_size) {
    throw std::invalid_argument("residual_gradient: trajectory channels do not match the grid");
  }
  std::vector<double> grad(x.size(), 0.0);
  std::vector<double> f(K);
  double inv_dt = 1.0 / spec.dt;
  for (int n = 0; n < L; ++n) {
    int eval = n < L - 1 ? n : L - 1;
    const double* u = x.data() + static_cast<std::size_t>(eval) * K;
    central_rhs(spec, u, K, f.data());
    for (int i = 0; i < K; ++i) {
      int im = (i + K - 1) % K;
      int ip = (i + 1) % K;
      double dudt;
      int row_hi, row_lo;  // coefficient +1/dt on row_hi, -1/dt on row_lo
      if (n < L - 1) {
        row_hi = n + 1;
        row_lo = n;
      } else {
        row_hi = L - 1;
        row_lo = L - 2;
      }
      dudt = (x[static_cast<std::size_t>(row_hi) * K + i] -
              x[static_cast<std::size_t>(row_lo) * K + i]) *
             inv_dt;
      double r = dudt - f[i];
      double w = -2.0 * r;
      grad[static_cast<std::size_t>(row_hi) * K + i] += w * inv_dt;
      grad[static_cast<std::size_t>(row_lo) * K + i] -= w * inv_dt;
      double dc, dp, dm;
      central_rhs_jacobian(spec, u, i, K, dc, dp, dm);
      grad[static_cast<std::size_t>(eval) * K + i] -= w * dc;
      grad[static_cast<std::size_t>(eval) * K + ip] -= w * dp;
      grad[static_cast<std::size_t>(eval) * K + im] -= w * dm;
    }
  }
  return grad;
}

std::vector<double> residual_gradient_autodiff(const std::vector<double>& x, int L, int K,
                                               const PdeSpec& spec) {
  std::vector<real> xv(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xv[i] = static_cast<real>(x[i]);
  Tensor leaf({L, K}, std::move(xv), true);

  std::vector<int> head_idx(L - 1), next_idx(L - 1);
  for (int n = 0; n < L - 1; ++n) {
    head_idx[n] = n;
    next_idx[n] = n + 1;
  }
  double inv_dt = 1.0 / spec.dt;
  auto central_f = [&](const Tensor& rows) {
    Tensor up = roll_cols(rows, -1);   // value at i+1
    Tensor um = roll_cols(rows, 1);    // value at i-1
    Tensor ux = mul_scalar(sub(up, um), 1.0 / (2.0 * spec.dx));
    Tensor lap = mul_scalar(sub(add(up, um), mul_scalar(rows, 2.0)), 1.0 / (spec.dx * spec.dx));
    switch (spec.family) {
      case PdeSpec::Family::advection: return mul_scalar(ux, -spec.c);
      case PdeSpec::Family::burgers:
        return add(mul_scalar(mul(rows, ux), -1.0), mul_scalar(lap, spec.nu));
      default:
        return sub(mul_scalar(lap, spec.D), mul_scalar(rows, spec.k));
    }
  };

  Tensor head = gather_rows(leaf, head_idx);
  Tensor next = gather_rows(leaf, next_idx);
  Tensor r_interior = sub(mul_scalar(sub(next, head), inv_dt), central_f(head));
  Tensor last = gather_rows(leaf, {L - 1});
  Tensor prev = gather_rows(leaf, {L - 2});
  Tensor r_last = sub(mul_scalar(sub(last, prev), inv_dt), central_f(last));
  Tensor r = concat_rows({r_interior, r_last});
  Tensor k_value = mul_scalar(sum(mul(r, r)), -1.0);
  GradTape tape = backward(k_value);
  const auto& g = tape.grad(leaf);
  return std::vector<double>(g.begin(), g.end());
}

std::vector<double> logp_gradient(Denoiser& model, const std::vector<double>& x_tar,
                                  const ConditionTargetSplit& split, int b,
                                  const NoiseSchedule& sched, const EnergyConfig& cfg, Rng& rng) {
  ElementView view = element_view(split, b);
  std::size_t per = static_cast<std::size_t>(view.L) * view.K;
  if (x_tar.size() != per) throw std::invalid_argument("logp_gradient: value shape mismatch");

  std::vector<real> xv(per), tarm(per), conv(per);
  for (std::size_t i = 0; i < per; ++i) {
    xv[i] = static_cast<real>(x_tar[i]);
    tarm[i] = view.tar_mask[i] ? real(1) : real(0);
    conv[i] = view.con_mask[i] ? static_cast<real>(split.x_con[b * per + i]) : real(0);
  }
  Tensor leaf({view.L, view.K}, std::move(xv), true);
  Tensor tar_mask_t({view.L, view.K}, std::move(tarm), false);
  Tensor con_vals({view.L, view.K}, std::move(conv), false);
  Tensor x_masked = mul(leaf, tar_mask_t);

  int t_hi = cfg.full_range_t ? sched.T
                              : std::max(1, static_cast<int>(sched.T * cfg.t_band_frac));
  Tensor loss;
  for (int m = 0; m < cfg.logp_mc_samples; ++m) {
    int t = rng.uniform_int(1, t_hi);
    double ab = sched.alpha_bar_at(t);
    double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    std::vector<real> ev(per, real(0));
    for (std::size_t i = 0; i < per; ++i) {
      if (view.tar_mask[i]) ev[i] = static_cast<real>(rng.normal());
    }
    Tensor eps({view.L, view.K}, std::move(ev), false);
    Tensor x_t = add(add(mul_scalar(x_masked, sa), mul_scalar(eps, sb)), con_vals);
    Tensor eps_hat = model.predict_eps(x_t, t, view);
    Tensor diff = mul(sub(eps_hat, eps), tar_mask_t);
    Tensor term = sum(mul(diff, diff));
    loss = m == 0 ? term : add(loss, term);
  }
  loss = mul_scalar(loss, 1.0 / cfg.logp_mc_samples);
  GradTape tape = backward(loss);
  const auto& g = tape.grad(leaf);

  // log p ~ -E||eps_hat - eps||^2, so its gradient is the negated estimate;
  // condition cells get no update
  std::vector<double> out(per, 0.0);
  for (std::size_t i = 0; i < per; ++i) {
    if (view.tar_mask[i]) {
      out[i] = -g[i];
      if (!std::isfinite(out[i])) throw NonFiniteError("logp_gradient: non-finite gradient");
    }
  }
  return out;
}

void langevin_chain(std::vector<double>& x,
                    const std::function<void(const std::vector<double>&, std::vector<double>&)>& grad_energy,
                    double step, int iters, Rng& rng, const std::uint8_t* update_mask,
                    double divergence_bound) {
  std::vector<double> g(x.size());
  double noise_scale = std::sqrt(2.0 * step);
  for (int it = 0; it < iters; ++it) {
    grad_energy(x, g);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (update_mask && !update_mask[i]) continue;
      x[i] += step * g[i] + noise_scale * rng.normal();
      if (!(std::fabs(x[i]) <= divergence_bound)) {
        throw std::runtime_error("langevin_chain: divergence at iteration " + std::to_string(it));
      }
    }
  }
}

std::vector<double> langevin_refine(const std::vector<double>& x_completed,
                                    const ConditionTargetSplit& split, int b, const PdeSpec& spec,
                                    Denoiser& model, const NoiseSchedule& sched,
                                    const EnergyConfig& cfg, Rng& rng,
                                    std::vector<RefineDiagnosticsRow>* diagnostics) {
  cfg.validate();
  ElementView view = element_view(split, b);
  std::size_t per = static_cast<std::size_t>(view.L) * view.K;
  if (x_completed.size() != per) {
    throw std::invalid_argument("langevin_refine: sample shape mismatch");
  }
  if (view.K != spec.grid_size) {
    throw std::invalid_argument("langevin_refine: trajectory channels do not match the PDE grid");
  }
  std::vector<double> x = x_completed;
  double noise_scale = std::sqrt(2.0 * cfg.step);
  for (int j = 0; j < cfg.iters; ++j) {
    std::vector<double> gK = residual_gradient(x, view.L, view.K, spec);
    std::vector<double> glogp;
    if (cfg.alpha > 0.0) glogp = logp_gradient(model, x, split, b, sched, cfg, rng);
    if (diagnostics) {
      RefineDiagnosticsRow row;
      row.iter = j;
      row.K_value = pde_residual(x, view.L, view.K, spec).K_value;
      double nk = 0, np = 0;
      for (std::size_t i = 0; i < per; ++i) {
        if (!view.tar_mask[i]) continue;
        nk += gK[i] * gK[i];
        if (!glogp.empty()) np += glogp[i] * glogp[i];
      }
      row.grad_K_norm = std::sqrt(nk);
      row.grad_logp_norm = std::sqrt(np);
      diagnostics->push_back(row);
    }
    for (std::size_t i = 0; i < per; ++i) {
      if (!view.tar_mask[i]) continue;  // condition cells and padding untouched
      double drift = cfg.step * gK[i];
      if (!glogp.empty()) drift += cfg.alpha * cfg.step * glogp[i];
      x[i] += drift + noise_scale * rng.normal();
      if (!(std::fabs(x[i]) <= cfg.divergence_bound)) {
        throw std::runtime_error("langevin_refine: divergence at iteration " +
                                 std::to_string(j) + " (|x| exceeded bound)");
      }
    }
  }
  return x;
}

BoltzmannReport verify_boltzmann_optimum(const std::vector<double>& p,
                                         const std::vector<double>& K, double alpha,
                                         int n_perturbations, Rng& rng) {
  if (p.size() != K.size() || p.empty()) {
    throw std::invalid_argument("verify_boltzmann_optimum: p and K sizes differ");
  }
  double psum = 0.0;
  for (double v : p) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("verify_boltzmann_optimum: p must be strictly positive");
    }
    psum += v;
  }
  std::size_t n = p.size();
  std::vector<double> pn(n);
  for (std::size_t i = 0; i < n; ++i) pn[i] = p[i] / psum;

  // q* ~ p^alpha exp(K), stabilized in log space
  std::vector<double> w(n);
  double wmax = -1e300;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = alpha * std::log(pn[i]) + K[i];
    wmax = std::max(wmax, w[i]);
  }
  std::vector<double> q(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = std::exp(w[i] - wmax);
    z += q[i];
  }
  for (auto& v : q) v /= z;

  // Gibbs variational objective for the energy E = K + alpha log p:
  // G(q) = E_q[E] + H(q); its exact maximizer is exp(E)/Z. At alpha = 1 it
  // equals the KL-regularized objective E_q[K] - alpha KL(q || p).
  auto gibbs = [&](const std::vector<double>& d) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d[i] <= 0.0) continue;
      v += d[i] * (K[i] + alpha * std::log(pn[i])) - d[i] * std::log(d[i]);
    }
    return v;
  };
  auto eq9 = [&](const std::vector<double>& d) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d[i] <= 0.0) continue;
      v += d[i] * K[i] - alpha * d[i] * std::log(d[i] / pn[i]);
    }
    return v;
  };

  BoltzmannReport rep;
  rep.objective_at_q = gibbs(q);
  rep.eq9_objective_at_q = eq9(q);
  rep.best_perturbed = -1e300;
  std::vector<double> cand(n);
  for (int it = 0; it < n_perturbations; ++it) {
    if (it % 2 == 0) {
      // local perturbation of q*
      double scale = rng.uniform(1e-4, 0.5);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cand[i] = std::max(1e-12, q[i] + scale * rng.uniform(-1.0, 1.0) / n);
        s += cand[i];
      }
      for (auto& v : cand) v /= s;
    } else {
      // global random distribution (log-normal weights)
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cand[i] = std::exp(rng.normal());
        s += cand[i];
      }
      for (auto& v : cand) v /= s;
    }
    rep.best_perturbed = std::max(rep.best_perturbed, gibbs(cand));
  }
  rep.passed = rep.objective_at_q + 1e-12 * (1.0 + std::fabs(rep.objective_at_q)) >=
               rep.best_perturbed;
  return rep;
}

}  // namespace timedit
