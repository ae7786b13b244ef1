#include "timedit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "timedit/model.hpp"

namespace timedit {

PointMetrics metrics_point(const std::vector<double>& y, const std::vector<double>& yhat,
                           const std::vector<std::uint8_t>& mask) {
  if (y.size() != yhat.size() || y.size() != mask.size()) {
    throw std::invalid_argument("metrics_point: shape mismatch");
  }
  PointMetrics m;
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!mask[i]) continue;
    double d = y[i] - yhat[i];
    se += d * d;
    ae += std::fabs(d);
    ++m.count;
  }
  if (m.count == 0) throw std::invalid_argument("metrics_point: empty mask");
  m.mse = se / m.count;
  m.mae = ae / m.count;
  m.rmse = std::sqrt(m.mse);
  return m;
}

namespace {

double sample_quantile(const std::vector<double>& sorted, double level) {
  std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  double h = level * (n - 1);
  std::size_t lo = static_cast<std::size_t>(h);
  if (lo >= n - 1) return sorted[n - 1];
  double w = h - lo;
  return sorted[lo] + w * (sorted[lo + 1] - sorted[lo]);
}

double quantile_loss(double level, double q, double z) {
  // Lambda_a(q, z) = (a - 1{z < q}) (z - q)
  double indicator = z < q ? 1.0 : 0.0;
  return (level - indicator) * (z - q);
}

}  // namespace

double crps_discretized(std::vector<double> samples, double x, int levels) {
  if (samples.empty() || levels < 1) {
    throw std::invalid_argument("crps_discretized: need samples and levels");
  }
  std::sort(samples.begin(), samples.end());
  double acc = 0.0;
  for (int i = 1; i <= levels; ++i) {
    double level = static_cast<double>(i) / (levels + 1);
    acc += 2.0 * quantile_loss(level, sample_quantile(samples, level), x);
  }
  return acc / levels;
}

CrpsResult crps(const SampleSet& set, const std::vector<double>& y,
                const std::vector<std::uint8_t>& mask) {
  std::size_t cells = static_cast<std::size_t>(set.B) * set.L * set.K;
  if (y.size() != cells || mask.size() != cells) {
    throw std::invalid_argument("crps: shape mismatch");
  }
  double num = 0.0, denom = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    if (!mask[c]) continue;
    ++count;
    double cell = 0.0;
    for (int q = 0; q < SampleSet::kLevels; ++q) {
      double level = 0.05 * (q + 1);
      cell += 2.0 * quantile_loss(level, set.quantiles[c * SampleSet::kLevels + q], y[c]);
    }
    num += cell / SampleSet::kLevels;
    denom += std::fabs(y[c]);
  }
  if (count == 0) throw std::invalid_argument("crps: empty mask");

  CrpsResult res;
  res.crps = denom > 0.0 ? num / denom : num;

  // channel-summed series: per (b, l), the distribution of the masked-channel
  // sum scored against the summed target
  double num_sum = 0.0;
  std::vector<double> buf(set.n);
  for (int b = 0; b < set.B; ++b) {
    for (int l = 0; l < set.L; ++l) {
      double target = 0.0;
      bool any = false;
      for (int k = 0; k < set.K; ++k) {
        std::size_t c = set.cell(b, l, k);
        if (mask[c]) {
          target += y[c];
          any = true;
        }
      }
      if (!any) continue;
      for (int s = 0; s < set.n; ++s) {
        double v = 0.0;
        for (int k = 0; k < set.K; ++k) {
          std::size_t c = set.cell(b, l, k);
          if (mask[c]) v += set.samples[s][c];
        }
        buf[s] = v;
      }
      num_sum += crps_discretized(buf, target, SampleSet::kLevels);
    }
  }
  res.crps_sum = denom > 0.0 ? num_sum / denom : num_sum;
  return res;
}

std::vector<std::uint8_t> point_adjust(const std::vector<std::uint8_t>& raw_labels,
                                       const std::vector<std::uint8_t>& true_labels) {
  if (raw_labels.size() != true_labels.size()) {
    throw std::invalid_argument("point_adjust: length mismatch");
  }
  std::vector<std::uint8_t> adjusted = raw_labels;
  std::size_t n = raw_labels.size();
  std::size_t i = 0;
  while (i < n) {
    if (!true_labels[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    bool hit = false;
    while (j < n && true_labels[j]) {
      hit = hit || raw_labels[j];
      ++j;
    }
    if (hit) {
      for (std::size_t p = i; p < j; ++p) adjusted[p] = 1;
    }
    i = j;
  }
  return adjusted;
}

Prf1 prf1(const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("prf1: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] && truth[i]) ++tp;
    else if (predicted[i] && !truth[i]) ++fp;
    else if (!predicted[i] && truth[i]) ++fn;
  }
  Prf1 r;
  if (tp + fp == 0 && tp + fn == 0) {
    r.degenerate = true;
    return r;
  }
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                      : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// recurrent learners for the generation benchmarks
// ---------------------------------------------------------------------------

namespace {

// Gated recurrent stack built on the substrate; an LSTM stand-in with the
// same layer count and hidden size as the reference protocol.
struct GruNet {
  int in_dim, hidden, layers;
  std::vector<NamedParam> params;

  GruNet(int in_dim_, int hidden_, int layers_, Rng& rng)
      : in_dim(in_dim_), hidden(hidden_), layers(layers_) {
    auto add = [&](const std::string& name, int r, int c, double std) {
      std::vector<real> data(static_cast<std::size_t>(r) * c, real(0));
      if (std > 0) {
        for (auto& x : data) x = static_cast<real>(rng.normal() * std);
      }
      std::vector<int> shape = c == 1 ? std::vector<int>{r} : std::vector<int>{r, c};
      params.push_back({name, Tensor(shape, std::move(data), true), {}});
    };
    for (int l = 0; l < layers; ++l) {
      int d_in = l == 0 ? in_dim : hidden;
      std::string p = "l" + std::to_string(l) + ".";
      for (const char* gate : {"z", "r", "h"}) {
        add(p + "W" + gate, d_in, hidden, 0.2 / std::sqrt(d_in));
        add(p + "U" + gate, hidden, hidden, 0.2 / std::sqrt(hidden));
        add(p + "b" + gate, hidden, 1, 0.0);
      }
    }
  }

  Tensor param(const std::string& name) const {
    for (const auto& p : params) {
      if (p.name == name) return p.tensor;
    }
    throw std::invalid_argument("GruNet: missing param " + name);
  }

  // One step of layer l: returns the new hidden state (B x hidden).
  Tensor step(int l, const Tensor& x, const Tensor& h) const {
    std::string p = "l" + std::to_string(l) + ".";
    auto gate = [&](const char* g, const Tensor& hin) {
      return add_rowvec(add(matmul(x, param(p + "W" + g)), matmul(hin, param(p + "U" + g))),
                        param(p + "b" + g));
    };
    Tensor z = sigmoid(gate("z", h));
    Tensor r = sigmoid(gate("r", h));
    Tensor hc = tanh_act(add_rowvec(
        add(matmul(x, param(p + "Wh")), matmul(mul(r, h), param(p + "Uh"))), param(p + "bh")));
    // h' = h + z * (hc - h)
    return add(h, mul(z, sub(hc, h)));
  }

  // Hidden states of the top layer at every time step (length L list of B x hidden).
  std::vector<Tensor> run(const std::vector<Tensor>& inputs) const {
    int B = inputs[0].rows();
    std::vector<Tensor> h(layers);
    for (int l = 0; l < layers; ++l) h[l] = Tensor::zeros({B, hidden});
    std::vector<Tensor> top;
    top.reserve(inputs.size());
    for (const Tensor& x : inputs) {
      Tensor cur = x;
      for (int l = 0; l < layers; ++l) {
        h[l] = step(l, cur, h[l]);
        cur = h[l];
      }
      top.push_back(cur);
    }
    return top;
  }
};

// B x K constant input at time step t from flat windows.
Tensor step_input(const std::vector<std::vector<double>>& windows, const std::vector<int>& idx,
                  int t, int K) {
  std::vector<real> v(idx.size() * static_cast<std::size_t>(K));
  for (std::size_t b = 0; b < idx.size(); ++b) {
    for (int k = 0; k < K; ++k) {
      v[b * K + k] = static_cast<real>(windows[idx[b]][static_cast<std::size_t>(t) * K + k]);
    }
  }
  return Tensor({static_cast<int>(idx.size()), K}, std::move(v), false);
}

std::vector<int> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(idx[i], idx[rng.uniform_int(0, static_cast<int>(i))]);
  }
  return idx;
}

}  // namespace

double discriminative_score(const std::vector<std::vector<double>>& real_windows,
                            const std::vector<std::vector<double>>& synth_windows, int L, int K,
                            Rng& rng, const ScoreConfig& cfg) {
  if (real_windows.size() != synth_windows.size()) {
    throw std::invalid_argument("discriminative_score: real/synthetic counts differ");
  }
  std::size_t n = real_windows.size();
  std::size_t n_train = static_cast<std::size_t>(n * cfg.train_fraction);
  if (n_train == 0 || n_train == n) {
    throw std::invalid_argument("discriminative_score: too few windows to split");
  }

  GruNet net(K, cfg.hidden, cfg.layers, rng);
  std::vector<NamedParam>& params = net.params;
  {
    std::vector<real> w(static_cast<std::size_t>(cfg.hidden), real(0));
    params.push_back({"out.w", Tensor({cfg.hidden, 1}, std::move(w), true), {}});
    params.push_back({"out.b", Tensor({1}, {real(0)}, true), {}});
  }
  auto out_w = params[params.size() - 2].tensor;
  auto out_b = params[params.size() - 1].tensor;

  std::vector<int> order_r = shuffled_indices(n, rng);
  std::vector<int> order_s = shuffled_indices(n, rng);

  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.grad_clip = 1.0;
  Adam opt(ac);
  int half = std::max(1, cfg.batch_size / 2);
  for (int stepi = 0; stepi < cfg.train_steps; ++stepi) {
    std::vector<int> idx_r(half), idx_s(half);
    for (int i = 0; i < half; ++i) {
      idx_r[i] = order_r[rng.uniform_int(0, static_cast<int>(n_train) - 1)];
      idx_s[i] = order_s[rng.uniform_int(0, static_cast<int>(n_train) - 1)];
    }
    std::vector<Tensor> inputs;
    inputs.reserve(L);
    for (int t = 0; t < L; ++t) {
      Tensor xr = step_input(real_windows, idx_r, t, K);
      Tensor xs = step_input(synth_windows, idx_s, t, K);
      inputs.push_back(concat_rows({xr, xs}));
    }
    std::vector<Tensor> top = net.run(inputs);
    Tensor logits = add_rowvec(matmul(top.back(), out_w), out_b);
    std::vector<real> labels(2 * half, real(0));
    for (int i = 0; i < half; ++i) labels[i] = real(1);
    Tensor loss = bce_with_logits(logits, labels);
    GradTape tape = backward(loss);
    accumulate_param_grads(params, tape);
    opt.step(params);
  }

  // held-out accuracy
  NoGradGuard ng;
  int correct = 0, total = 0;
  std::vector<int> test_r(order_r.begin() + n_train, order_r.end());
  std::vector<int> test_s(order_s.begin() + n_train, order_s.end());
  for (int side = 0; side < 2; ++side) {
    const auto& windows = side == 0 ? real_windows : synth_windows;
    const auto& idx = side == 0 ? test_r : test_s;
    std::vector<Tensor> inputs;
    inputs.reserve(L);
    for (int t = 0; t < L; ++t) inputs.push_back(step_input(windows, idx, t, K));
    std::vector<Tensor> top = net.run(inputs);
    Tensor logits = add_rowvec(matmul(top.back(), out_w), out_b);
    for (int b = 0; b < logits.rows(); ++b) {
      bool said_real = logits.at(b) > 0;
      correct += said_real == (side == 0);
      ++total;
    }
  }
  double acc = static_cast<double>(correct) / total;
  return std::fabs(acc - 0.5);
}

double predictive_score(const std::vector<std::vector<double>>& real_windows,
                        const std::vector<std::vector<double>>& synth_windows, int L, int K,
                        Rng& rng, const ScoreConfig& cfg) {
  if (L < 2) throw std::invalid_argument("predictive_score: window length must be >= 2");
  if (real_windows.empty() || synth_windows.empty()) {
    throw std::invalid_argument("predictive_score: empty window sets");
  }
  std::size_t n_train = static_cast<std::size_t>(synth_windows.size() * cfg.train_fraction);
  std::size_t n_test_start = static_cast<std::size_t>(real_windows.size() * cfg.train_fraction);
  if (n_train == 0 || n_test_start >= real_windows.size()) {
    throw std::invalid_argument("predictive_score: too few windows to split");
  }

  GruNet net(K, cfg.hidden, cfg.layers, rng);
  std::vector<NamedParam>& params = net.params;
  {
    std::vector<real> w(static_cast<std::size_t>(cfg.hidden) * K, real(0));
    params.push_back({"out.w", Tensor({cfg.hidden, K}, std::move(w), true), {}});
    params.push_back({"out.b", Tensor({K}, std::vector<real>(K, real(0)), true), {}});
  }
  auto out_w = params[params.size() - 2].tensor;
  auto out_b = params[params.size() - 1].tensor;

  std::vector<int> order = shuffled_indices(synth_windows.size(), rng);

  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.grad_clip = 1.0;
  Adam opt(ac);
  for (int stepi = 0; stepi < cfg.train_steps; ++stepi) {
    std::vector<int> idx(std::min<std::size_t>(cfg.batch_size, n_train));
    for (auto& v : idx) v = order[rng.uniform_int(0, static_cast<int>(n_train) - 1)];
    std::vector<Tensor> inputs;
    for (int t = 0; t < L - 1; ++t) inputs.push_back(step_input(synth_windows, idx, t, K));
    std::vector<Tensor> top = net.run(inputs);
    Tensor loss;
    for (int t = 0; t < L - 1; ++t) {
      Tensor pred = add_rowvec(matmul(top[t], out_w), out_b);
      Tensor target = step_input(synth_windows, idx, t + 1, K);
      Tensor term = sum(abs_val(sub(pred, target)));
      loss = t == 0 ? term : add(loss, term);
    }
    loss = mul_scalar(loss, 1.0 / (static_cast<double>(idx.size()) * (L - 1) * K));
    GradTape tape = backward(loss);
    accumulate_param_grads(params, tape);
    opt.step(params);
  }

  // MAE on held-out real windows
  NoGradGuard ng;
  std::vector<int> test_idx;
  for (std::size_t i = n_test_start; i < real_windows.size(); ++i) {
    test_idx.push_back(static_cast<int>(i));
  }
  std::vector<Tensor> inputs;
  for (int t = 0; t < L - 1; ++t) inputs.push_back(step_input(real_windows, test_idx, t, K));
  std::vector<Tensor> top = net.run(inputs);
  double ae = 0.0;
  std::size_t count = 0;
  for (int t = 0; t < L - 1; ++t) {
    Tensor pred = add_rowvec(matmul(top[t], out_w), out_b);
    Tensor target = step_input(real_windows, test_idx, t + 1, K);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      ae += std::fabs(static_cast<double>(pred.at(i)) - static_cast<double>(target.at(i)));
      ++count;
    }
  }
  return ae / count;
}

}  // namespace timedit
