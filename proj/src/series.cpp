#include "timedit/series.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace timedit {

TimeSeriesBatch TimeSeriesBatch::make(int B, int L, int K) {
  TimeSeriesBatch b;
  b.B = B;
  b.L = L;
  b.K = K;
  b.values.assign(static_cast<std::size_t>(B) * L * K, 0.0);
  b.obs_mask.assign(static_cast<std::size_t>(B) * L * K, 1);
  b.channel_valid.assign(static_cast<std::size_t>(B) * K, 1);
  b.time_index.resize(static_cast<std::size_t>(B) * L);
  for (int bb = 0; bb < B; ++bb) {
    for (int l = 0; l < L; ++l) b.time_index[static_cast<std::size_t>(bb) * L + l] = l;
  }
  return b;
}

void TimeSeriesBatch::enforce_invariants() {
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) {
      bool cv = valid_channel(b, k);
      for (int l = 0; l < L; ++l) {
        std::size_t i = idx(b, l, k);
        if (!cv && obs_mask[i]) {
          throw std::invalid_argument("TimeSeriesBatch: invalid channel marked observed");
        }
        if (!obs_mask[i]) values[i] = 0.0;
        if (!std::isfinite(values[i])) {
          throw std::invalid_argument("TimeSeriesBatch: non-finite value");
        }
      }
    }
  }
}

TimeSeriesBatch TimeSeriesBatch::element(int b) const {
  TimeSeriesBatch out = TimeSeriesBatch::make(1, L, K);
  std::size_t base = static_cast<std::size_t>(b) * L * K;
  std::copy(values.begin() + base, values.begin() + base + static_cast<std::size_t>(L) * K,
            out.values.begin());
  std::copy(obs_mask.begin() + base, obs_mask.begin() + base + static_cast<std::size_t>(L) * K,
            out.obs_mask.begin());
  std::copy(channel_valid.begin() + static_cast<std::size_t>(b) * K,
            channel_valid.begin() + static_cast<std::size_t>(b + 1) * K,
            out.channel_valid.begin());
  std::copy(time_index.begin() + static_cast<std::size_t>(b) * L,
            time_index.begin() + static_cast<std::size_t>(b + 1) * L, out.time_index.begin());
  return out;
}

NormStats::Mode norm_mode_from_string(const std::string& s) {
  if (s == "standardize") return NormStats::Mode::standardize;
  if (s == "minmax") return NormStats::Mode::minmax;
  throw std::invalid_argument("unknown normalization mode: " + s);
}

std::pair<TimeSeriesBatch, NormStats> normalize(const TimeSeriesBatch& batch,
                                                NormStats::Mode mode) {
  TimeSeriesBatch out = batch;
  NormStats st;
  st.mode = mode;
  st.B = batch.B;
  st.K = batch.K;
  st.loc.assign(static_cast<std::size_t>(batch.B) * batch.K, 0.0);
  st.scale.assign(static_cast<std::size_t>(batch.B) * batch.K, 1.0);
  st.degenerate.assign(static_cast<std::size_t>(batch.B) * batch.K, 0);

  for (int b = 0; b < batch.B; ++b) {
    for (int k = 0; k < batch.K; ++k) {
      std::size_t sk = static_cast<std::size_t>(b) * batch.K + k;
      double lo = 0.0, sc = 1.0;
      int n = 0;
      if (mode == NormStats::Mode::standardize) {
        double sum = 0.0;
        for (int l = 0; l < batch.L; ++l) {
          if (batch.observed(b, l, k)) {
            sum += batch.val(b, l, k);
            ++n;
          }
        }
        if (n > 0) {
          lo = sum / n;
          double var = 0.0;
          for (int l = 0; l < batch.L; ++l) {
            if (batch.observed(b, l, k)) {
              double c = batch.val(b, l, k) - lo;
              var += c * c;
            }
          }
          var /= n;  // population variance
          sc = std::sqrt(var);
        }
      } else {
        double mn = 0.0, mx = 0.0;
        for (int l = 0; l < batch.L; ++l) {
          if (batch.observed(b, l, k)) {
            double v = batch.val(b, l, k);
            if (n == 0) {
              mn = mx = v;
            } else {
              mn = std::min(mn, v);
              mx = std::max(mx, v);
            }
            ++n;
          }
        }
        lo = mn;
        sc = mx - mn;
      }
      if (n == 0 || sc <= 1e-12) {
        sc = 1.0;
        st.degenerate[sk] = 1;
      }
      st.loc[sk] = lo;
      st.scale[sk] = sc;
      for (int l = 0; l < batch.L; ++l) {
        std::size_t i = batch.idx(b, l, k);
        out.values[i] = batch.obs_mask[i] ? (batch.values[i] - lo) / sc : 0.0;
      }
    }
  }
  return {std::move(out), std::move(st)};
}

TimeSeriesBatch denormalize(const TimeSeriesBatch& batch, const NormStats& stats) {
  if (stats.B != batch.B || stats.K != batch.K) {
    throw std::invalid_argument("denormalize: stats shape mismatch");
  }
  TimeSeriesBatch out = batch;
  for (int b = 0; b < batch.B; ++b) {
    for (int k = 0; k < batch.K; ++k) {
      std::size_t sk = static_cast<std::size_t>(b) * batch.K + k;
      for (int l = 0; l < batch.L; ++l) {
        std::size_t i = batch.idx(b, l, k);
        out.values[i] =
            batch.obs_mask[i] ? batch.values[i] * stats.scale[sk] + stats.loc[sk] : 0.0;
      }
    }
  }
  return out;
}

double denorm_value(double v, const NormStats& stats, int b, int k) {
  std::size_t sk = static_cast<std::size_t>(b) * stats.K + k;
  return v * stats.scale[sk] + stats.loc[sk];
}

TimeSeriesBatch pad_time(const TimeSeriesBatch& batch, int L_target) {
  if (batch.L > L_target) {
    throw std::invalid_argument("pad_time: batch longer than target length");
  }
  if (batch.L == L_target) return batch;
  int pad = L_target - batch.L;
  TimeSeriesBatch out = TimeSeriesBatch::make(batch.B, L_target, batch.K);
  std::fill(out.obs_mask.begin(), out.obs_mask.end(), std::uint8_t(0));
  out.channel_valid = batch.channel_valid;
  for (int b = 0; b < batch.B; ++b) {
    double t0 = batch.time_index[static_cast<std::size_t>(b) * batch.L];
    double step = batch.L > 1
                      ? batch.time_index[static_cast<std::size_t>(b) * batch.L + 1] - t0
                      : 1.0;
    for (int l = 0; l < L_target; ++l) {
      out.time_index[static_cast<std::size_t>(b) * L_target + l] =
          l < pad ? t0 - step * (pad - l)
                  : batch.time_index[static_cast<std::size_t>(b) * batch.L + (l - pad)];
    }
    for (int l = 0; l < batch.L; ++l) {
      for (int k = 0; k < batch.K; ++k) {
        out.values[out.idx(b, l + pad, k)] = batch.val(b, l, k);
        out.obs_mask[out.idx(b, l + pad, k)] = batch.obs_mask[batch.idx(b, l, k)];
      }
    }
  }
  return out;
}

std::vector<TimeSeriesBatch> chunk_channels(const TimeSeriesBatch& batch, int K_max) {
  if (K_max < 1) throw std::invalid_argument("chunk_channels: K_max must be >= 1");
  int n_chunks = (batch.K + K_max - 1) / K_max;
  std::vector<TimeSeriesBatch> out;
  out.reserve(n_chunks);
  for (int c = 0; c < n_chunks; ++c) {
    int k0 = c * K_max;
    int kw = std::min(K_max, batch.K - k0);
    TimeSeriesBatch chunk = TimeSeriesBatch::make(batch.B, batch.L, K_max);
    std::fill(chunk.obs_mask.begin(), chunk.obs_mask.end(), std::uint8_t(0));
    std::fill(chunk.channel_valid.begin(), chunk.channel_valid.end(), std::uint8_t(0));
    chunk.time_index = batch.time_index;
    for (int b = 0; b < batch.B; ++b) {
      for (int k = 0; k < kw; ++k) {
        chunk.channel_valid[static_cast<std::size_t>(b) * K_max + k] =
            batch.channel_valid[static_cast<std::size_t>(b) * batch.K + k0 + k];
        for (int l = 0; l < batch.L; ++l) {
          chunk.values[chunk.idx(b, l, k)] = batch.val(b, l, k0 + k);
          chunk.obs_mask[chunk.idx(b, l, k)] = batch.obs_mask[batch.idx(b, l, k0 + k)];
        }
      }
    }
    chunk.enforce_invariants();
    out.push_back(std::move(chunk));
  }
  return out;
}

TimeSeriesBatch gen_sine(int n, int L, int K, Rng& rng, const SineConfig& cfg) {
  if (n < 1 || L < 1 || K < 1) throw std::invalid_argument("gen_sine: n, L, K must be >= 1");
  TimeSeriesBatch out = TimeSeriesBatch::make(n, L, K);
  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  for (int b = 0; b < n; ++b) {
    for (int k = 0; k < K; ++k) {
      double f = rng.uniform(cfg.freq_lo, cfg.freq_hi);
      double phase = rng.uniform(0.0, kTwoPi);
      for (int l = 0; l < L; ++l) {
        out.values[out.idx(b, l, k)] = cfg.amp * std::sin(kTwoPi * f * l + phase);
      }
    }
  }
  return out;
}

TimeSeriesBatch inject_placeholders(const std::vector<ChannelSeries>& channels) {
  if (channels.empty()) throw std::invalid_argument("inject_placeholders: no channels");
  std::vector<double> grid;
  for (const auto& ch : channels) {
    if (ch.timestamps.size() != ch.values.size()) {
      throw std::invalid_argument("inject_placeholders: channel '" + ch.name +
                                  "' has mismatched timestamp/value lengths");
    }
    for (std::size_t i = 1; i < ch.timestamps.size(); ++i) {
      if (ch.timestamps[i] < ch.timestamps[i - 1]) {
        throw std::invalid_argument("inject_placeholders: channel '" + ch.name +
                                    "' timestamps are not sorted");
      }
      if (ch.timestamps[i] == ch.timestamps[i - 1]) {
        throw std::invalid_argument("inject_placeholders: channel '" + ch.name +
                                    "' has duplicate timestamps");
      }
    }
    grid.insert(grid.end(), ch.timestamps.begin(), ch.timestamps.end());
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.empty()) throw std::invalid_argument("inject_placeholders: all channels empty");

  int L = static_cast<int>(grid.size());
  int K = static_cast<int>(channels.size());
  TimeSeriesBatch out = TimeSeriesBatch::make(1, L, K);
  std::fill(out.obs_mask.begin(), out.obs_mask.end(), std::uint8_t(0));
  std::copy(grid.begin(), grid.end(), out.time_index.begin());
  for (int k = 0; k < K; ++k) {
    const auto& ch = channels[k];
    std::size_t j = 0;
    for (int l = 0; l < L && j < ch.timestamps.size(); ++l) {
      if (grid[l] == ch.timestamps[j]) {
        out.values[out.idx(0, l, k)] = ch.values[j];
        out.obs_mask[out.idx(0, l, k)] = 1;
        ++j;
      }
    }
    if (ch.timestamps.empty()) out.channel_valid[k] = 0;
  }
  return out;
}

TimeSeriesBatch make_windows(const TimeSeriesBatch& batch, int len, int stride) {
  if (len < 1 || len > batch.L) throw std::invalid_argument("make_windows: bad window length");
  if (stride < 1) throw std::invalid_argument("make_windows: bad stride");
  int per_instance = (batch.L - len) / stride + 1;
  TimeSeriesBatch out = TimeSeriesBatch::make(batch.B * per_instance, len, batch.K);
  int w = 0;
  for (int b = 0; b < batch.B; ++b) {
    for (int s = 0; s < per_instance; ++s, ++w) {
      int l0 = s * stride;
      std::copy(batch.channel_valid.begin() + static_cast<std::size_t>(b) * batch.K,
                batch.channel_valid.begin() + static_cast<std::size_t>(b + 1) * batch.K,
                out.channel_valid.begin() + static_cast<std::size_t>(w) * batch.K);
      for (int l = 0; l < len; ++l) {
        out.time_index[static_cast<std::size_t>(w) * len + l] =
            batch.time_index[static_cast<std::size_t>(b) * batch.L + l0 + l];
        for (int k = 0; k < batch.K; ++k) {
          out.values[out.idx(w, l, k)] = batch.val(b, l0 + l, k);
          out.obs_mask[out.idx(w, l, k)] = batch.obs_mask[batch.idx(b, l0 + l, k)];
        }
      }
    }
  }
  return out;
}

}  // namespace timedit
