#include "timedit/mask.hpp"

#include <algorithm>
#include <stdexcept>

namespace timedit {

namespace {

TaskMask make_mask(TaskMask::Kind kind, int B, int L, int K) {
  if (B < 1 || L < 1 || K < 1) throw std::invalid_argument("mask: B, L, K must be >= 1");
  TaskMask m;
  m.kind = kind;
  m.B = B;
  m.L = L;
  m.K = K;
  m.mask.assign(static_cast<std::size_t>(B) * L * K, 0);
  return m;
}

}  // namespace

TaskMask random_mask(int B, int L, int K, double r, Rng& rng) {
  if (r < 0.0 || r > 1.0) throw std::invalid_argument("random_mask: r must be in [0, 1]");
  TaskMask m = make_mask(TaskMask::Kind::random, B, L, K);
  for (std::size_t i = 0; i < m.mask.size(); ++i) {
    m.mask[i] = rng.uniform() > r ? 1 : 0;
  }
  return m;
}

TaskMask block_mask(int B, int L, int K, int l) {
  if (l < 0 || l > L) throw std::invalid_argument("block_mask: predicted length exceeds L");
  TaskMask m = make_mask(TaskMask::Kind::block, B, L, K);
  for (int b = 0; b < B; ++b) {
    for (int j = 0; j < L - l; ++j) {
      for (int k = 0; k < K; ++k) m.mask[m.idx(b, j, k)] = 1;
    }
  }
  return m;
}

TaskMask stride_mask(int B, int L, int K, int n_blocks) {
  if (n_blocks < 1) throw std::invalid_argument("stride_mask: n_blocks must be >= 1");
  TaskMask m = make_mask(TaskMask::Kind::stride, B, L, K);
  int blk = (L + n_blocks - 1) / n_blocks;  // ceil(L / n_blocks)
  for (int b = 0; b < B; ++b) {
    for (int j = 0; j < L; ++j) {
      if ((j / blk) % 2 == 0) {
        for (int k = 0; k < K; ++k) m.mask[m.idx(b, j, k)] = 1;
      }
    }
  }
  return m;
}

TaskMask reconstruction_mask(int B, int L, int K) {
  return make_mask(TaskMask::Kind::reconstruction, B, L, K);
}

TaskMask custom_mask(int B, int L, int K, std::vector<std::uint8_t> cells) {
  TaskMask m = make_mask(TaskMask::Kind::custom, B, L, K);
  if (cells.size() != m.mask.size()) {
    throw std::invalid_argument("custom_mask: cell count does not match B*L*K");
  }
  for (auto& c : cells) c = c ? 1 : 0;
  m.mask = std::move(cells);
  return m;
}

std::size_t ConditionTargetSplit::tar_count() const {
  std::size_t n = 0;
  for (auto v : tar_mask) n += v;
  return n;
}

ConditionTargetSplit split(const TimeSeriesBatch& batch, const TaskMask& task_mask) {
  if (task_mask.B != batch.B || task_mask.L != batch.L || task_mask.K != batch.K) {
    throw std::invalid_argument("split: mask shape does not match batch");
  }
  ConditionTargetSplit s;
  s.B = batch.B;
  s.L = batch.L;
  s.K = batch.K;
  std::size_t n = batch.values.size();
  s.x_con.assign(n, 0.0);
  s.x_tar.assign(n, 0.0);
  s.con_mask.assign(n, 0);
  s.tar_mask.assign(n, 0);
  s.channel_valid = batch.channel_valid;
  s.time_index = batch.time_index;
  for (int b = 0; b < batch.B; ++b) {
    for (int l = 0; l < batch.L; ++l) {
      for (int k = 0; k < batch.K; ++k) {
        std::size_t i = batch.idx(b, l, k);
        bool usable = batch.obs_mask[i] && batch.valid_channel(b, k);
        if (!usable) continue;
        if (task_mask.mask[i]) {
          s.con_mask[i] = 1;
          s.x_con[i] = batch.values[i];
        } else {
          s.tar_mask[i] = 1;
          s.x_tar[i] = batch.values[i];
        }
      }
    }
  }
  if (s.tar_count() == 0) {
    throw std::invalid_argument("split: empty target stream (nothing to learn or predict)");
  }
  return s;
}

TaskMask sample_training_mask(int B, int L, int K, Rng& rng, const MaskMixConfig& cfg) {
  TaskMask out = make_mask(TaskMask::Kind::custom, B, L, K);
  for (int b = 0; b < B; ++b) {
    double u = rng.uniform() * (cfg.p_random + cfg.p_block + cfg.p_stride);
    TaskMask one;
    if (u < cfg.p_random) {
      one = random_mask(1, L, K, rng.uniform(cfg.r_lo, cfg.r_hi), rng);
    } else if (u < cfg.p_random + cfg.p_block) {
      one = block_mask(1, L, K, rng.uniform_int(1, std::max(1, L / 2)));
    } else {
      one = stride_mask(1, L, K, rng.uniform_int(cfg.n_blocks_lo, cfg.n_blocks_hi));
    }
    std::copy(one.mask.begin(), one.mask.end(),
              out.mask.begin() + static_cast<std::size_t>(b) * L * K);
  }
  return out;
}

}  // namespace timedit
