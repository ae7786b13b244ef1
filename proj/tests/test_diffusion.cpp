#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "timedit/diffusion.hpp"

using namespace timedit;

namespace {

struct ZeroDenoiser : Denoiser {
  Tensor predict_eps(const Tensor& x_full, int, const ElementView&) override {
    return Tensor::zeros(x_full.shape());
  }
};

// Returns a fixed noise field regardless of input.
struct FixedEpsDenoiser : Denoiser {
  std::vector<double> eps;  // L*K
  Tensor predict_eps(const Tensor& x_full, int, const ElementView&) override {
    std::vector<real> v(eps.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<real>(eps[i]);
    return Tensor(x_full.shape(), std::move(v));
  }
};

// Exact noise oracle for a known clean series (single batch element).
struct X0OracleDenoiser : Denoiser {
  const NoiseSchedule* sched = nullptr;
  std::vector<double> x0;  // L*K
  Tensor predict_eps(const Tensor& x_full, int t, const ElementView& view) override {
    double ab = sched->alpha_bar_at(t);
    double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    std::vector<real> v(x0.size(), real(0));
    for (std::size_t i = 0; i < x0.size(); ++i) {
      if (view.tar_mask[i]) {
        v[i] = static_cast<real>((static_cast<double>(x_full.at(i)) - sa * x0[i]) / sb);
      }
    }
    return Tensor(x_full.shape(), std::move(v));
  }
};

ConditionTargetSplit full_target_split(const TimeSeriesBatch& batch) {
  return split(batch, reconstruction_mask(batch.B, batch.L, batch.K));
}

}  // namespace

TEST_CASE("make_schedule basics") {
  NoiseSchedule one = make_schedule(1, 0.1, 0.2);
  CHECK(one.beta.size() == 1);
  CHECK(one.beta[0] == doctest::Approx(0.1));
  CHECK(one.alpha_bar[0] == doctest::Approx(0.9));

  NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  double prod = 1.0;
  for (int t = 0; t < 1000; ++t) {
    double b = 1e-4 + (0.02 - 1e-4) * t / 999.0;
    prod *= 1.0 - b;
    CHECK(s.beta[t] == doctest::Approx(b));
    CHECK(s.alpha_bar[t] == doctest::Approx(prod).epsilon(1e-12));
  }
  CHECK(s.alpha_bar[999] == doctest::Approx(4.04e-5).epsilon(0.01));
  for (int t = 1; t < 1000; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);

  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.5, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.5, 1.0), std::invalid_argument);
}

TEST_CASE("forward_sample small noise limit and exact inversion") {
  Rng rng(3);
  TimeSeriesBatch batch = TimeSeriesBatch::make(1, 24, 2);
  for (auto& v : batch.values) v = rng.uniform(-2, 2);
  ConditionTargetSplit s = full_target_split(batch);

  NoiseSchedule tiny = make_schedule(10, 1e-6, 1e-6);
  DiffusionSample ds = forward_sample(s, {1}, tiny, rng);
  for (std::size_t i = 0; i < ds.x_t.size(); ++i) {
    CHECK(std::fabs(ds.x_t[i] - s.x_tar[i]) < 1e-2);
  }

  NoiseSchedule sched = make_schedule(100, 1e-4, 0.02);
  for (int t : {1, 25, 50, 80, 100}) {
    DiffusionSample d = forward_sample(s, {t}, sched, rng);
    double ab = sched.alpha_bar_at(t);
    for (std::size_t i = 0; i < d.x_t.size(); ++i) {
      if (!s.tar_mask[i]) continue;
      double rec = (d.x_t[i] - std::sqrt(1.0 - ab) * d.eps[i]) / std::sqrt(ab);
      CHECK(std::fabs(rec - s.x_tar[i]) < 1e-5);
    }
  }
}

TEST_CASE("forward_sample variance tracking at deciles") {
  Rng rng(17);
  int cells = 100000;
  TimeSeriesBatch batch = TimeSeriesBatch::make(1, cells / 10, 10);
  for (auto& v : batch.values) v = rng.normal();  // standardized x0
  double var0 = 0, mean0 = 0;
  for (auto v : batch.values) mean0 += v;
  mean0 /= cells;
  for (auto v : batch.values) var0 += (v - mean0) * (v - mean0);
  var0 /= cells;
  ConditionTargetSplit s = full_target_split(batch);
  NoiseSchedule sched = make_schedule(100, 1e-4, 0.02);
  for (int t = 10; t <= 100; t += 10) {
    DiffusionSample d = forward_sample(s, {t}, sched, rng);
    double m = 0, v2 = 0;
    for (auto v : d.x_t) m += v;
    m /= cells;
    for (auto v : d.x_t) v2 += (v - m) * (v - m);
    v2 /= cells;
    double ab = sched.alpha_bar_at(t);
    double want = ab * var0 + (1.0 - ab);
    CHECK(std::fabs(v2 - want) < 0.03 * want);
  }
}

TEST_CASE("training_loss oracle injection gives zero") {
  Rng rng(7);
  TimeSeriesBatch batch = TimeSeriesBatch::make(2, 16, 3);
  for (auto& v : batch.values) v = rng.uniform(-1, 1);
  ConditionTargetSplit s = split(batch, block_mask(2, 16, 3, 8));
  NoiseSchedule sched = make_schedule(50, 1e-3, 0.1);

  ForwardDraws draws;
  draws.t = {7, 31};
  draws.eps.assign(s.x_tar.size(), 0.0);
  for (std::size_t i = 0; i < draws.eps.size(); ++i) {
    if (s.tar_mask[i]) draws.eps[i] = rng.normal();
  }

  // model that outputs the true eps per element
  struct PerElementOracle : Denoiser {
    const ForwardDraws* draws;
    const ConditionTargetSplit* s;
    int next_b = 0;
    Tensor predict_eps(const Tensor& x_full, int, const ElementView&) override {
      std::size_t per = static_cast<std::size_t>(s->L) * s->K;
      std::vector<real> v(per);
      for (std::size_t i = 0; i < per; ++i) {
        v[i] = static_cast<real>(draws->eps[next_b * per + i]);
      }
      ++next_b;
      return Tensor(x_full.shape(), std::move(v));
    }
  } oracle;
  oracle.draws = &draws;
  oracle.s = &s;

  Tensor loss = training_loss(oracle, s, sched, rng, &draws);
  CHECK(std::fabs(loss.value()) < 1e-8);
}

TEST_CASE("training_loss of the zero model is about one") {
  Rng rng(23);
  TimeSeriesBatch batch = TimeSeriesBatch::make(10, 1000, 10);  // 1e5 cells
  for (auto& v : batch.values) v = rng.uniform(-1, 1);
  ConditionTargetSplit s = full_target_split(batch);
  NoiseSchedule sched = make_schedule(100, 1e-4, 0.02);
  ZeroDenoiser zero;
  Tensor loss = training_loss(zero, s, sched, rng);
  CHECK(std::fabs(loss.value() - 1.0) < 0.03);
}

TEST_CASE("training_loss ignores values at unobserved cells") {
  Rng rng(29);
  TimeSeriesBatch batch = TimeSeriesBatch::make(1, 20, 2);
  for (auto& v : batch.values) v = rng.uniform(-1, 1);
  for (int l = 0; l < 20; l += 3) batch.obs_mask[batch.idx(0, l, 0)] = 0;
  batch.enforce_invariants();
  ConditionTargetSplit s = split(batch, block_mask(1, 20, 2, 5));

  NoiseSchedule sched = make_schedule(50, 1e-3, 0.1);
  ForwardDraws draws;
  draws.t = {11};
  draws.eps.assign(s.x_tar.size(), 0.0);
  for (std::size_t i = 0; i < draws.eps.size(); ++i) {
    if (s.tar_mask[i]) draws.eps[i] = rng.normal();
  }
  ZeroDenoiser zero;
  Rng r1(5), r2(5);
  double l1 = training_loss(zero, s, sched, r1, &draws).value();
  // perturb unobserved placeholder values; the loss must not move
  ConditionTargetSplit s2 = s;
  for (std::size_t i = 0; i < s2.x_tar.size(); ++i) {
    if (!s2.tar_mask[i] && !s2.con_mask[i]) {
      s2.x_tar[i] = 99.0;
      s2.x_con[i] = -99.0;
    }
  }
  double l2 = training_loss(zero, s2, sched, r2, &draws).value();
  CHECK(l1 == l2);

  CHECK_THROWS_AS(
      [&] {
        TimeSeriesBatch empty = TimeSeriesBatch::make(1, 4, 1);
        ConditionTargetSplit bad = split(empty, block_mask(1, 4, 1, 1));
        bad.tar_mask.assign(bad.tar_mask.size(), 0);
        training_loss(zero, bad, sched, rng);
      }(),
      std::invalid_argument);
}

TEST_CASE("ancestral sampling with zero denoiser at T=1 is deterministic algebra") {
  TimeSeriesBatch batch = TimeSeriesBatch::make(1, 6, 1);
  for (auto& v : batch.values) v = 0.5;
  ConditionTargetSplit s = full_target_split(batch);
  NoiseSchedule sched = make_schedule(1, 0.04, 0.04);
  ZeroDenoiser zero;
  Rng rng(99);
  auto out = ancestral_sample(zero, s, sched, 1, rng);
  // replicate the chain's x_T draw stream
  Rng crng = rng.fork(0);
  for (std::size_t i = 0; i < out[0].size(); ++i) {
    double xT = crng.normal();
    CHECK(out[0][i] == doctest::Approx(xT / std::sqrt(1.0 - 0.04)).epsilon(1e-9));
  }
}

TEST_CASE("ancestral sampling with an exact noise oracle recovers x0") {
  Rng rng(41);
  TimeSeriesBatch batch = TimeSeriesBatch::make(1, 24, 2);
  for (auto& v : batch.values) v = rng.uniform(-1.5, 1.5);
  ConditionTargetSplit s = split(batch, block_mask(1, 24, 2, 12));
  NoiseSchedule sched = make_schedule(100, 1e-4, 0.02);

  X0OracleDenoiser oracle;
  oracle.sched = &sched;
  oracle.x0.assign(batch.values.begin(), batch.values.end());

  auto out = ancestral_sample(oracle, s, sched, 4, rng);
  double err = 0;
  int n = 0;
  for (const auto& sample : out) {
    for (std::size_t i = 0; i < sample.size(); ++i) {
      if (s.tar_mask[i]) {
        err += std::fabs(sample[i] - batch.values[i]);
        ++n;
      }
    }
  }
  CHECK(err / n < 0.05);
}

TEST_CASE("ancestral sampling clamps condition cells and zeroes invalid channels") {
  Rng rng(55);
  TimeSeriesBatch batch = TimeSeriesBatch::make(1, 16, 3);
  for (auto& v : batch.values) v = rng.uniform(-1, 1);
  for (int l = 0; l < 16; ++l) batch.obs_mask[batch.idx(0, l, 2)] = 0;
  batch.channel_valid[2] = 0;
  batch.enforce_invariants();
  ConditionTargetSplit s = split(batch, block_mask(1, 16, 3, 4));
  NoiseSchedule sched = make_schedule(20, 1e-3, 0.1);
  ZeroDenoiser zero;
  auto out = ancestral_sample(zero, s, sched, 2, rng);
  for (const auto& sample : out) {
    for (int l = 0; l < 16; ++l) {
      for (int k = 0; k < 3; ++k) {
        std::size_t i = s.idx(0, l, k);
        if (s.con_mask[i]) CHECK(sample[i] == batch.values[i]);
        if (k == 2) CHECK(sample[i] == 0.0);
      }
    }
  }
}

TEST_CASE("ancestral sampling is bit-deterministic under a fixed seed") {
  Rng rngA(7), rngB(7);
  TimeSeriesBatch batch = TimeSeriesBatch::make(2, 12, 2);
  Rng init(3);
  for (auto& v : batch.values) v = init.uniform(-1, 1);
  ConditionTargetSplit s = split(batch, block_mask(2, 12, 2, 6));
  NoiseSchedule sched = make_schedule(30, 1e-3, 0.1);
  FixedEpsDenoiser fixed;
  fixed.eps.assign(static_cast<std::size_t>(12) * 2, 0.03);
  auto a = ancestral_sample(fixed, s, sched, 3, rngA);
  auto b = ancestral_sample(fixed, s, sched, 3, rngB);
  CHECK(a == b);
}

TEST_CASE("aggregate medians and quantile monotonicity") {
  std::vector<std::vector<double>> one = {{1.5, -2.0}};
  SampleSet s1 = aggregate(one, 1, 2, 1);
  CHECK(s1.median[0] == doctest::Approx(1.5));
  CHECK(s1.median[1] == doctest::Approx(-2.0));

  std::vector<std::vector<double>> three = {{1.0}, {2.0}, {9.0}};
  SampleSet s3 = aggregate(three, 1, 1, 1);
  CHECK(s3.median[0] == doctest::Approx(2.0));

  Rng rng(31);
  std::vector<std::vector<double>> many(10, std::vector<double>(6));
  for (auto& s : many) {
    for (auto& v : s) v = rng.uniform(-3, 3);
  }
  SampleSet set = aggregate(many, 1, 3, 2);
  for (int c = 0; c < 6; ++c) {
    for (int q = 1; q < SampleSet::kLevels; ++q) {
      CHECK(set.quantiles[c * SampleSet::kLevels + q] >=
            set.quantiles[c * SampleSet::kLevels + q - 1]);
    }
  }
}
