#include "timedit/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "timedit/parallel.hpp"

namespace timedit {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    double b = T == 1 ? beta_start
                      : beta_start + (beta_end - beta_start) * static_cast<double>(t) / (T - 1);
    s.beta[t] = b;
    s.alpha[t] = 1.0 - b;
    prod *= s.alpha[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

DiffusionSample forward_sample(const ConditionTargetSplit& split, const std::vector<int>& t,
                               const NoiseSchedule& sched, Rng& rng) {
  if (static_cast<int>(t.size()) != split.B) {
    throw std::invalid_argument("forward_sample: one t per batch element expected");
  }
  DiffusionSample out;
  out.t = t;
  std::size_t n = split.x_tar.size();
  out.x_t.assign(n, 0.0);
  out.eps.assign(n, 0.0);
  std::size_t per = static_cast<std::size_t>(split.L) * split.K;
  for (int b = 0; b < split.B; ++b) {
    int tb = t[b];
    if (tb < 1 || tb > sched.T) throw std::invalid_argument("forward_sample: t out of range");
    double ab = sched.alpha_bar_at(tb);
    double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      if (split.tar_mask[i]) {
        double e = rng.normal();
        out.eps[i] = e;
        out.x_t[i] = sa * split.x_tar[i] + sb * e;
      } else if (split.con_mask[i]) {
        out.x_t[i] = split.x_con[i];
      }
    }
  }
  return out;
}

ElementView element_view(const ConditionTargetSplit& split, int b) {
  ElementView v;
  v.L = split.L;
  v.K = split.K;
  std::size_t per = static_cast<std::size_t>(split.L) * split.K;
  v.con_mask = split.con_mask.data() + b * per;
  v.tar_mask = split.tar_mask.data() + b * per;
  v.channel_valid = split.channel_valid.data() + static_cast<std::size_t>(b) * split.K;
  return v;
}

Tensor training_loss(Denoiser& model, const ConditionTargetSplit& split,
                     const NoiseSchedule& sched, Rng& rng, const ForwardDraws* fixed) {
  std::size_t n_tar = split.tar_count();
  if (n_tar == 0) throw std::invalid_argument("training_loss: empty target");

  std::vector<int> t(split.B);
  for (int b = 0; b < split.B; ++b) {
    t[b] = fixed ? fixed->t[b] : rng.uniform_int(1, sched.T);
  }
  DiffusionSample ds;
  if (fixed) {
    ds.t = t;
    ds.eps = fixed->eps;
    ds.x_t.assign(split.x_tar.size(), 0.0);
    std::size_t per = static_cast<std::size_t>(split.L) * split.K;
    for (int b = 0; b < split.B; ++b) {
      double ab = sched.alpha_bar_at(t[b]);
      double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
      for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
        if (split.tar_mask[i]) {
          ds.x_t[i] = sa * split.x_tar[i] + sb * ds.eps[i];
        } else if (split.con_mask[i]) {
          ds.x_t[i] = split.x_con[i];
        }
      }
    }
  } else {
    ds = forward_sample(split, t, sched, rng);
  }

  std::size_t per = static_cast<std::size_t>(split.L) * split.K;
  Tensor total;
  for (int b = 0; b < split.B; ++b) {
    std::vector<real> xv(per), tar(per);
    for (std::size_t i = 0; i < per; ++i) {
      xv[i] = static_cast<real>(ds.x_t[b * per + i]);
      tar[i] = split.tar_mask[b * per + i] ? real(1) : real(0);
    }
    Tensor x_full({split.L, split.K}, std::move(xv), false);
    Tensor eps_hat = model.predict_eps(x_full, t[b], element_view(split, b));
    std::vector<real> epsv(per);
    for (std::size_t i = 0; i < per; ++i) {
      epsv[i] = static_cast<real>(ds.eps[b * per + i]);
    }
    Tensor eps_true({split.L, split.K}, std::move(epsv), false);
    Tensor tar_t({split.L, split.K}, std::move(tar), false);
    Tensor diff = mul(sub(eps_hat, eps_true), tar_t);
    Tensor sq = sum(mul(diff, diff));
    total = b == 0 ? sq : add(total, sq);
  }
  return mul_scalar(total, 1.0 / static_cast<double>(n_tar));
}

std::vector<std::vector<double>> ancestral_sample(Denoiser& model,
                                                  const ConditionTargetSplit& split,
                                                  const NoiseSchedule& sched, int n_chains,
                                                  Rng& rng) {
  if (n_chains < 1) throw std::invalid_argument("ancestral_sample: n_chains must be >= 1");
  std::size_t per = static_cast<std::size_t>(split.L) * split.K;
  std::vector<std::vector<double>> out(n_chains);

  parallel_for(n_chains, [&](int chain) {
    NoGradGuard ng;
    Rng crng = rng.fork(static_cast<std::uint64_t>(chain));
    std::vector<double>& x = out[chain];
    x.assign(split.x_con.begin(), split.x_con.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (split.tar_mask[i]) x[i] = crng.normal();
    }
    for (int t = sched.T; t >= 1; --t) {
      double a = sched.alpha_at(t);
      double ab = sched.alpha_bar_at(t);
      double coef = (1.0 - a) / std::sqrt(1.0 - ab);
      double inv_sqrt_a = 1.0 / std::sqrt(a);
      double sigma = std::sqrt(sched.beta_at(t));
      for (int b = 0; b < split.B; ++b) {
        std::vector<real> xv(per);
        for (std::size_t i = 0; i < per; ++i) {
          xv[i] = static_cast<real>(x[b * per + i]);
        }
        Tensor x_full({split.L, split.K}, std::move(xv), false);
        Tensor eps_hat = model.predict_eps(x_full, t, element_view(split, b));
        for (std::size_t i = 0; i < per; ++i) {
          std::size_t gi = b * per + i;
          if (!split.tar_mask[gi]) continue;
          double e = static_cast<double>(eps_hat.at(i));
          double mean = inv_sqrt_a * (x[gi] - coef * e);
          double z = t > 1 ? crng.normal() : 0.0;
          x[gi] = mean + sigma * z;
          if (!std::isfinite(x[gi])) {
            throw NonFiniteError("ancestral_sample: non-finite state at step " +
                                 std::to_string(t));
          }
        }
        // invalid channels stay zero at every step
        for (int l = 0; l < split.L; ++l) {
          for (int k = 0; k < split.K; ++k) {
            if (!split.channel_valid[static_cast<std::size_t>(b) * split.K + k]) {
              x[b * per + static_cast<std::size_t>(l) * split.K + k] = 0.0;
            }
          }
        }
      }
    }
  });
  return out;
}

SampleSet aggregate(std::vector<std::vector<double>> samples, int B, int L, int K) {
  if (samples.empty()) throw std::invalid_argument("aggregate: need at least one sample");
  SampleSet set;
  set.n = static_cast<int>(samples.size());
  set.B = B;
  set.L = L;
  set.K = K;
  std::size_t cells = static_cast<std::size_t>(B) * L * K;
  for (const auto& s : samples) {
    if (s.size() != cells) throw std::invalid_argument("aggregate: sample shape mismatch");
  }
  set.samples = std::move(samples);
  set.median.resize(cells);
  set.quantiles.resize(cells * SampleSet::kLevels);

  std::vector<double> buf(set.n);
  for (std::size_t c = 0; c < cells; ++c) {
    for (int s = 0; s < set.n; ++s) buf[s] = set.samples[s][c];
    std::sort(buf.begin(), buf.end());
    auto interp = [&](double level) {
      if (set.n == 1) return buf[0];
      double h = level * (set.n - 1);
      int lo = static_cast<int>(h);
      if (lo >= set.n - 1) return buf[set.n - 1];
      double w = h - lo;
      return buf[lo] + w * (buf[lo + 1] - buf[lo]);
    };
    set.median[c] = interp(0.5);
    for (int q = 0; q < SampleSet::kLevels; ++q) {
      set.quantiles[c * SampleSet::kLevels + q] = interp(0.05 * (q + 1));
    }
  }
  return set;
}

}  // namespace timedit
