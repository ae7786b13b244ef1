#pragma once

#include <cstdint>
#include <vector>

#include "timedit/rng.hpp"
#include "timedit/series.hpp"

namespace timedit {

// Task mask over a B x L x K grid: 1 = condition (visible), 0 = target
// (to denoise). Block/stride/reconstruction masks are constant across
// channels at each time step.
struct TaskMask {
  enum class Kind { random, block, stride, reconstruction, custom };
  Kind kind = Kind::custom;
  int B = 0, L = 0, K = 0;
  std::vector<std::uint8_t> mask;  // B*L*K

  std::size_t idx(int b, int l, int k) const {
    return (static_cast<std::size_t>(b) * L + l) * K + k;
  }
  bool visible(int b, int l, int k) const { return mask[idx(b, l, k)] != 0; }
};

// Each cell independently visible with probability 1 - r (cell kept iff the
// uniform draw exceeds r).
TaskMask random_mask(int B, int L, int K, double r, Rng& rng);

// Visible for time index j < L - l; the final l steps are the target.
TaskMask block_mask(int B, int L, int K, int l);

// Alternating visible/hidden blocks of length ceil(L / n_blocks), starting
// visible.
TaskMask stride_mask(int B, int L, int K, int n_blocks);

// All-zero mask: the whole sequence is the target.
TaskMask reconstruction_mask(int B, int L, int K);

TaskMask custom_mask(int B, int L, int K, std::vector<std::uint8_t> cells);

// Observed cells split into disjoint condition/target streams; cells that are
// unobserved or on invalid channels belong to neither.
struct ConditionTargetSplit {
  int B = 0, L = 0, K = 0;
  std::vector<double> x_con;             // condition values, zeros elsewhere
  std::vector<double> x_tar;             // target ground truth, zeros elsewhere
  std::vector<std::uint8_t> con_mask;    // B*L*K
  std::vector<std::uint8_t> tar_mask;    // B*L*K
  std::vector<std::uint8_t> channel_valid;  // B*K
  std::vector<double> time_index;        // B*L

  std::size_t idx(int b, int l, int k) const {
    return (static_cast<std::size_t>(b) * L + l) * K + k;
  }
  std::size_t tar_count() const;
};

// Throws std::invalid_argument when the target stream is empty (nothing to
// learn or predict).
ConditionTargetSplit split(const TimeSeriesBatch& batch, const TaskMask& task_mask);

struct MaskMixConfig {
  double p_random = 1.0 / 3.0;
  double p_block = 1.0 / 3.0;
  double p_stride = 1.0 / 3.0;
  double r_lo = 0.1, r_hi = 0.9;   // random-mask ratio range
  int n_blocks_lo = 2, n_blocks_hi = 8;
  // block length l ~ U{1, ..., L/2}
};

// Pre-training mix: each batch element independently draws one of the three
// training masks with random parameters.
TaskMask sample_training_mask(int B, int L, int K, Rng& rng, const MaskMixConfig& cfg = {});

}  // namespace timedit
