#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "timedit/rng.hpp"

namespace timedit {

// Batch of multivariate series on a shared time grid. Values at unobserved
// positions are placeholder zeros and must never enter losses or metrics;
// channel_valid == 0 marks padding channels (whole channel unobserved).
struct TimeSeriesBatch {
  int B = 0, L = 0, K = 0;
  std::vector<double> values;              // B*L*K, row-major (b, l, k)
  std::vector<std::uint8_t> obs_mask;      // B*L*K
  std::vector<std::uint8_t> channel_valid; // B*K
  std::vector<double> time_index;          // B*L

  static TimeSeriesBatch make(int B, int L, int K);

  std::size_t idx(int b, int l, int k) const {
    return (static_cast<std::size_t>(b) * L + l) * K + k;
  }
  double val(int b, int l, int k) const { return values[idx(b, l, k)]; }
  bool observed(int b, int l, int k) const { return obs_mask[idx(b, l, k)] != 0; }
  bool valid_channel(int b, int k) const {
    return channel_valid[static_cast<std::size_t>(b) * K + k] != 0;
  }

  // Re-zeroes placeholder cells and checks the mask invariants; throws on
  // violation of channel_valid ==> obs_mask.
  void enforce_invariants();

  // Single batch element as a B=1 batch.
  TimeSeriesBatch element(int b) const;
};

struct NormStats {
  enum class Mode { standardize, minmax };
  Mode mode = Mode::standardize;
  int B = 0, K = 0;
  std::vector<double> loc;               // B*K
  std::vector<double> scale;             // B*K, strictly positive
  std::vector<std::uint8_t> degenerate;  // B*K, 1 where channel was constant/empty
};

NormStats::Mode norm_mode_from_string(const std::string& s);

// Statistics over observed cells only, per instance per channel; placeholder
// cells stay zero. Constant or empty channels get scale 1 and a flag.
std::pair<TimeSeriesBatch, NormStats> normalize(const TimeSeriesBatch& batch,
                                                NormStats::Mode mode);
TimeSeriesBatch denormalize(const TimeSeriesBatch& batch, const NormStats& stats);

// Affine-inverts a raw value (e.g. sampler output) for cell (b, ., k).
double denorm_value(double v, const NormStats& stats, int b, int k);

// Prepends masked zeros so the most recent observations end at L_target.
TimeSeriesBatch pad_time(const TimeSeriesBatch& batch, int L_target);

// Splits channels into ceil(K / K_max) groups in channel order; the last
// group is zero-padded with channel_valid = 0.
std::vector<TimeSeriesBatch> chunk_channels(const TimeSeriesBatch& batch, int K_max);

struct SineConfig {
  double freq_lo = 0.02;  // cycles per step
  double freq_hi = 0.10;
  double amp = 1.0;
};

// Fully observed sinusoids; frequency and phase drawn per (instance, channel).
TimeSeriesBatch gen_sine(int n, int L, int K, Rng& rng, const SineConfig& cfg = {});

struct ChannelSeries {
  std::string name;
  std::vector<double> timestamps;  // sorted, unique
  std::vector<double> values;
};

// Union time grid across channels; positions without a sample get
// obs_mask = 0 placeholder zeros. No interpolation.
TimeSeriesBatch inject_placeholders(const std::vector<ChannelSeries>& channels);

// All full windows of `len` starting at multiples of `stride`, from every
// instance, as a new batch.
TimeSeriesBatch make_windows(const TimeSeriesBatch& batch, int len, int stride);

}  // namespace timedit
