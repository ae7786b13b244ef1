#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "timedit/physics.hpp"

using namespace timedit;

namespace {

PdeSpec advection_spec(int nx = 16) {
  PdeSpec s;
  s.family = PdeSpec::Family::advection;
  s.c = 1.0;
  s.grid_size = nx;
  s.dx = 1.0 / nx;
  s.dt = 0.5 * s.dx;
  return s;
}

PdeSpec diffusion_spec(int nx = 16) {
  PdeSpec s;
  s.family = PdeSpec::Family::diffusion_reaction;
  s.D = 1.0;
  s.k = 0.1;
  s.grid_size = nx;
  s.dx = 1.0 / nx;
  s.dt = 0.4 * s.dx * s.dx / s.D;
  return s;
}

PdeSpec burgers_spec(int nx = 16) {
  PdeSpec s;
  s.family = PdeSpec::Family::burgers;
  s.nu = 0.1;
  s.grid_size = nx;
  s.dx = 1.0 / nx;
  s.dt = 0.4 * s.dx * s.dx / s.nu;
  return s;
}

std::vector<double> time_shuffled(const std::vector<double>& x, int L, int K, Rng& rng) {
  std::vector<int> order(L);
  for (int i = 0; i < L; ++i) order[i] = i;
  for (int i = L - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  std::vector<double> out(x.size());
  for (int n = 0; n < L; ++n) {
    std::copy(x.begin() + static_cast<std::size_t>(order[n]) * K,
              x.begin() + static_cast<std::size_t>(order[n] + 1) * K,
              out.begin() + static_cast<std::size_t>(n) * K);
  }
  return out;
}

}  // namespace

TEST_CASE("residual vanishes on constant fields under advection") {
  PdeSpec spec = advection_spec();
  int L = 10;
  std::vector<double> x(static_cast<std::size_t>(L) * spec.grid_size, 3.7);
  ResidualField r = pde_residual(x, L, spec.grid_size, spec);
  CHECK(r.K_value == 0.0);
  for (double c : r.cell_sq) CHECK(c == 0.0);
}

TEST_CASE("K is non-positive and zero only at exact discrete solutions") {
  Rng rng(3);
  PdeSpec spec = diffusion_spec();
  std::vector<double> x(32 * static_cast<std::size_t>(spec.grid_size));
  for (auto& v : x) v = rng.uniform(-1, 1);
  ResidualField r = pde_residual(x, 32, spec.grid_size, spec);
  CHECK(r.K_value < 0.0);
}

TEST_CASE("solver output scores at least 10x better than a shuffled copy") {
  Rng rng(5);
  for (auto spec : {advection_spec(), diffusion_spec(), burgers_spec()}) {
    IcConfig ic;
    std::vector<double> u0 = spec.family == PdeSpec::Family::burgers
                                 ? ic_sine_mixture(spec, rng, ic)
                                 : ic_gaussian_peaks(spec, rng, ic);
    int steps = 40;
    TimeSeriesBatch traj = solve_pde(spec, u0, steps);
    ResidualField good = pde_residual(traj.values, steps + 1, spec.grid_size, spec);
    Rng srng(7);
    std::vector<double> bad = time_shuffled(traj.values, steps + 1, spec.grid_size, srng);
    ResidualField worse = pde_residual(bad, steps + 1, spec.grid_size, spec);
    INFO("family = ", spec.family_name(), " K_good = ", good.K_value,
         " K_shuffled = ", worse.K_value);
    CHECK(std::fabs(good.K_value) * 10.0 < std::fabs(worse.K_value));
  }
}

TEST_CASE("diffusion-reaction residual on a spatially constant analytic decay") {
  PdeSpec spec = diffusion_spec();
  spec.dt = 0.01;
  int L = 50;
  double A = 1.0;
  std::vector<double> x(static_cast<std::size_t>(L) * spec.grid_size);
  for (int n = 0; n < L; ++n) {
    double u = A * std::exp(-spec.k * n * spec.dt);
    for (int i = 0; i < spec.grid_size; ++i) x[static_cast<std::size_t>(n) * spec.grid_size + i] = u;
  }
  ResidualField r = pde_residual(x, L, spec.grid_size, spec);
  // diffusion vanishes; the residual is the one-step defect of exp(-k t),
  // which stays below 1e-4 at this k dt
  for (int n = 0; n < L; ++n) {
    for (int i = 0; i < spec.grid_size; ++i) {
      double got = std::sqrt(r.cell_sq[static_cast<std::size_t>(n) * spec.grid_size + i]);
      double u_n = A * std::exp(-spec.k * (n < L - 1 ? n : L - 1) * spec.dt);
      // forward difference of the closed form plus k u
      double dudt = n < L - 1 ? u_n * (std::exp(-spec.k * spec.dt) - 1.0) / spec.dt
                              : A * std::exp(-spec.k * (L - 1) * spec.dt) *
                                    (1.0 - std::exp(spec.k * spec.dt)) / spec.dt;
      double want = std::fabs(dudt + spec.k * (n < L - 1 ? u_n : u_n));
      CHECK(got == doctest::Approx(want).epsilon(1e-6));
      CHECK(got < 1e-4);
    }
  }
}

TEST_CASE("adjoint gradient is small at an exact discrete solution") {
  Rng rng(11);
  PdeSpec spec = diffusion_spec();
  std::vector<double> u0 = ic_gaussian_peaks(spec, rng);
  TimeSeriesBatch traj = solve_pde(spec, u0, 30);
  auto g = residual_gradient(traj.values, 31, spec.grid_size, spec);
  double gnorm = 0;
  for (double v : g) gnorm += v * v;
  gnorm = std::sqrt(gnorm);
  Rng srng(13);
  auto bad = time_shuffled(traj.values, 31, spec.grid_size, srng);
  auto gb = residual_gradient(bad, 31, spec.grid_size, spec);
  double gnorm_bad = 0;
  for (double v : gb) gnorm_bad += v * v;
  gnorm_bad = std::sqrt(gnorm_bad);
  INFO("grad norm at solution = ", gnorm, " shuffled = ", gnorm_bad);
  CHECK(gnorm * 10 < gnorm_bad);  // near the stencil truncation floor
}

TEST_CASE("adjoint matches substrate autodiff and finite differences") {
  Rng rng(17);
  for (auto spec : {advection_spec(8), diffusion_spec(8), burgers_spec(8)}) {
    int L = 12;
    std::vector<double> x(static_cast<std::size_t>(L) * spec.grid_size);
    for (auto& v : x) v = rng.uniform(-1, 1);
    auto adj = residual_gradient(x, L, spec.grid_size, spec);
    auto ad = residual_gradient_autodiff(x, L, spec.grid_size, spec);
    double scale = 1e-8;
    for (double v : adj) scale = std::max(scale, std::fabs(v));
    for (std::size_t i = 0; i < adj.size(); ++i) {
      CHECK(std::fabs(adj[i] - ad[i]) < 1e-5 * scale + 1e-6);
    }
    // central finite differences of K (double precision throughout)
    double h = 1e-6;
    for (std::size_t i = 0; i < adj.size(); i += 17) {
      std::vector<double> xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      double fd = (pde_residual(xp, L, spec.grid_size, spec).K_value -
                   pde_residual(xm, L, spec.grid_size, spec).K_value) /
                  (2 * h);
      CHECK(std::fabs(fd - adj[i]) < 1e-3 * scale + 1e-5);
    }
  }
}

TEST_CASE("residual locality: distant cells are untouched by a delta perturbation") {
  Rng rng(23);
  PdeSpec spec = advection_spec(12);
  int L = 20;
  std::vector<double> x(static_cast<std::size_t>(L) * 12);
  for (auto& v : x) v = rng.uniform(-1, 1);
  ResidualField base = pde_residual(x, L, 12, spec);
  int pm = 10, pj = 5;
  std::vector<double> xp = x;
  xp[static_cast<std::size_t>(pm) * 12 + pj] += 0.5;
  ResidualField pert = pde_residual(xp, L, 12, spec);
  for (int n = 0; n < L; ++n) {
    for (int i = 0; i < 12; ++i) {
      bool time_near = std::abs(n - pm) <= 1;
      bool space_near = std::min(std::abs(i - pj), 12 - std::abs(i - pj)) <= 1;
      if (!(time_near && space_near)) {
        CHECK(pert.cell_sq[static_cast<std::size_t>(n) * 12 + i] ==
              base.cell_sq[static_cast<std::size_t>(n) * 12 + i]);
      }
    }
  }
}

namespace {

// Score-consistent oracle for unit Gaussian data: eps_hat = sqrt(1-abar) x_t.
struct GaussianScoreOracle : Denoiser {
  const NoiseSchedule* sched;
  Tensor predict_eps(const Tensor& x_full, int t, const ElementView&) override {
    return mul_scalar(x_full, std::sqrt(1.0 - sched->alpha_bar_at(t)));
  }
};

}  // namespace

TEST_CASE("logp gradient points toward the origin for the Gaussian oracle") {
  NoiseSchedule sched = make_schedule(100, 1e-3, 0.2);
  GaussianScoreOracle oracle;
  oracle.sched = &sched;

  int L = 5, K = 4;
  TimeSeriesBatch batch = TimeSeriesBatch::make(1, L, K);
  Rng br(2);
  for (auto& v : batch.values) v = br.uniform(-1, 1);
  ConditionTargetSplit s = split(batch, reconstruction_mask(1, L, K));

  EnergyConfig cfg;
  cfg.logp_mc_samples = 256;
  std::vector<double> x(static_cast<std::size_t>(L) * K);
  Rng xr(3);
  for (auto& v : x) v = (xr.uniform() < 0.5 ? -1 : 1) * xr.uniform(0.8, 2.0);
  Rng rng(5);
  auto g = logp_gradient(oracle, x, s, 0, sched, cfg, rng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(g[i] * x[i] < 0.0);  // toward zero in every coordinate
  }
}

TEST_CASE("logp gradient variance shrinks with more Monte-Carlo samples") {
  NoiseSchedule sched = make_schedule(50, 1e-3, 0.2);
  GaussianScoreOracle oracle;
  oracle.sched = &sched;
  int L = 4, K = 2;
  TimeSeriesBatch batch = TimeSeriesBatch::make(1, L, K);
  ConditionTargetSplit s = split(batch, reconstruction_mask(1, L, K));
  std::vector<double> x(8, 1.0);

  auto variance_with = [&](int mc) {
    EnergyConfig cfg;
    cfg.logp_mc_samples = mc;
    double mean = 0, m2 = 0;
    int reps = 48;
    for (int r = 0; r < reps; ++r) {
      Rng rng(1000 + r);
      double v = logp_gradient(oracle, x, s, 0, sched, cfg, rng)[0];
      mean += v;
      m2 += v * v;
    }
    mean /= reps;
    return m2 / reps - mean * mean;
  };
  double v4 = variance_with(4);
  double v32 = variance_with(32);
  INFO("var(mc=4) = ", v4, " var(mc=32) = ", v32);
  CHECK(v32 < v4);
}

TEST_CASE("logp gradient is zero at condition cells") {
  NoiseSchedule sched = make_schedule(50, 1e-3, 0.2);
  GaussianScoreOracle oracle;
  oracle.sched = &sched;
  int L = 6, K = 2;
  TimeSeriesBatch batch = TimeSeriesBatch::make(1, L, K);
  Rng br(4);
  for (auto& v : batch.values) v = br.uniform(-1, 1);
  ConditionTargetSplit s = split(batch, block_mask(1, L, K, 2));
  std::vector<double> x(12, 0.5);
  EnergyConfig cfg;
  Rng rng(6);
  auto g = logp_gradient(oracle, x, s, 0, sched, cfg, rng);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (s.con_mask[i]) CHECK(g[i] == 0.0);
  }
}

TEST_CASE("langevin chain reaches the unit Gaussian stationary distribution") {
  // analytic energy K(x) = -||x||^2 / 2, so grad E = -x and the stationary
  // law is N(0, I) per coordinate
  int dim = 100;
  std::vector<double> x(dim, 0.0);
  Rng rng(9);
  auto grad = [](const std::vector<double>& xs, std::vector<double>& g) {
    for (std::size_t i = 0; i < xs.size(); ++i) g[i] = -xs[i];
  };
  // burn-in
  langevin_chain(x, grad, 1e-3, 1000, rng);
  double sum = 0, sum2 = 0;
  int count = 0;
  for (int rep = 0; rep < 1000; ++rep) {  // 1e5 collected coordinates
    langevin_chain(x, grad, 1e-3, 1, rng);
    for (double v : x) {
      sum += v;
      sum2 += v * v;
      ++count;
    }
  }
  double mean = sum / count;
  double var = sum2 / count - mean * mean;
  INFO("empirical variance = ", var);
  CHECK(std::fabs(var - 1.0) < 0.1);
}

TEST_CASE("langevin_refine honors k=0 and aborts on divergence") {
  Rng rng(31);
  PdeSpec spec = advection_spec(8);
  std::vector<double> u0 = ic_gaussian_peaks(spec, rng);
  TimeSeriesBatch traj = solve_pde(spec, u0, 10);
  ConditionTargetSplit s = split(traj, block_mask(1, 11, 8, 5));

  GaussianScoreOracle oracle;
  NoiseSchedule sched = make_schedule(20, 1e-3, 0.2);
  oracle.sched = &sched;

  EnergyConfig cfg;
  cfg.iters = 0;
  Rng r1(3);
  auto out = langevin_refine(traj.values, s, 0, spec, oracle, sched, cfg, r1);
  CHECK(out == traj.values);

  EnergyConfig diverging;
  diverging.alpha = 0.0;
  diverging.iters = 500;
  diverging.step = 1e9;
  diverging.divergence_bound = 1e3;
  Rng r2(4);
  CHECK_THROWS_AS(langevin_refine(traj.values, s, 0, spec, oracle, sched, diverging, r2),
                  std::runtime_error);
}

TEST_CASE("refinement with alpha=0 drives |K| down on noised trajectories") {
  Rng rng(41);
  PdeSpec spec = advection_spec(8);
  std::vector<double> u0 = ic_gaussian_peaks(spec, rng);
  int steps = 24;
  TimeSeriesBatch traj = solve_pde(spec, u0, steps);
  ConditionTargetSplit s = split(traj, block_mask(1, steps + 1, 8, 12));

  // corrupt the target half
  std::vector<double> x = traj.values;
  Rng nr(7);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (s.tar_mask[i]) x[i] += 0.2 * nr.normal();
  }
  double before = std::fabs(pde_residual(x, steps + 1, 8, spec).K_value);

  GaussianScoreOracle oracle;
  NoiseSchedule sched = make_schedule(20, 1e-3, 0.2);
  oracle.sched = &sched;
  EnergyConfig cfg;
  cfg.alpha = 0.0;
  cfg.iters = 50;
  cfg.step = 2e-5;
  Rng rr(8);
  std::vector<RefineDiagnosticsRow> diag;
  auto refined = langevin_refine(x, s, 0, spec, oracle, sched, cfg, rr, &diag);
  double after = std::fabs(pde_residual(refined, steps + 1, 8, spec).K_value);
  INFO("|K| before = ", before, " after = ", after);
  CHECK(after < before);
  CHECK(diag.size() == 50);
  // condition cells untouched
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (s.con_mask[i]) CHECK(refined[i] == x[i]);
  }
}

TEST_CASE("boltzmann optimum: no-knowledge case returns p") {
  Rng rng(51);
  std::vector<double> p = {0.1, 0.3, 0.2, 0.25, 0.15};
  std::vector<double> K(5, 0.0);
  auto rep = verify_boltzmann_optimum(p, K, 1.0, 2000, rng);
  CHECK(rep.passed);
  // q* == p exactly: objective at q* equals objective at p
  double at_p = 0;
  for (std::size_t i = 0; i < p.size(); ++i) at_p += p[i] * std::log(p[i]) - p[i] * std::log(p[i]);
  CHECK(rep.eq9_objective_at_q == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("boltzmann optimum: large alpha concentrates on p and beats it") {
  Rng rng(53);
  std::vector<double> p = {0.05, 0.6, 0.1, 0.15, 0.1};
  std::vector<double> K = {0.4, -0.2, 0.1, 0.0, 0.3};
  double alpha = 50.0;
  auto rep = verify_boltzmann_optimum(p, K, alpha, 2000, rng);
  CHECK(rep.passed);
  // the Gibbs objective at q* dominates its value at p
  double at_p = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    at_p += p[i] * (K[i] + alpha * std::log(p[i])) - p[i] * std::log(p[i]);
  }
  CHECK(rep.objective_at_q >= at_p);
}

TEST_CASE("boltzmann optimum beats random perturbations on random instances") {
  Rng rng(57);
  for (int inst = 0; inst < 25; ++inst) {
    std::vector<double> p(5), K(5);
    double s = 0;
    for (auto& v : p) {
      v = rng.uniform(0.05, 1.0);
      s += v;
    }
    for (auto& v : p) v /= s;
    for (auto& v : K) v = rng.uniform(-1.0, 1.0);
    double alpha = rng.uniform(0.2, 3.0);
    auto rep = verify_boltzmann_optimum(p, K, alpha, 1000, rng);
    INFO("instance ", inst, " alpha = ", alpha, " G(q*) = ", rep.objective_at_q,
         " best perturbed = ", rep.best_perturbed);
    CHECK(rep.passed);
  }
}
