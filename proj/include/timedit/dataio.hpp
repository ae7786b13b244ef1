#pragma once

#include <string>
#include <vector>

#include "timedit/series.hpp"

namespace timedit {

struct CsvSchema {
  bool has_header = true;
  // Values treated as missing (e.g. the air-quality -200 convention).
  std::vector<double> sentinels;
};

// Wide CSV: first column timestamp, remaining columns channels, empty cell =
// missing. Returns a single-instance batch.
TimeSeriesBatch load_csv(const std::string& path, const CsvSchema& schema = {});

// JSON lines, one object per series:
//   {"t": [...], "channels": {"name": [...]}}   null = missing
// Instances shorter than the longest are front-padded.
TimeSeriesBatch load_jsonl(const std::string& path);

// Writes one instance back out in the wide CSV layout (blank = missing).
void write_csv(const std::string& path, const TimeSeriesBatch& batch, int b = 0,
               const std::vector<std::string>& channel_names = {});

// Binary 0/1 cells in the wide CSV layout (timestamp column ignored), or a
// JSON object {"mask": [[...per-channel row...], ...]}.
std::vector<std::uint8_t> load_mask_csv(const std::string& path, int L, int K);

}  // namespace timedit
