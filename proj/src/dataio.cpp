#include "timedit/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace timedit {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

bool is_sentinel(double v, const std::vector<double>& sentinels) {
  for (double s : sentinels) {
    if (v == s) return true;
  }
  return false;
}

}  // namespace

TimeSeriesBatch load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv: cannot open '" + path + "'");
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  std::size_t start = 0;
  if (schema.has_header) {
    if (rows.empty()) throw std::invalid_argument("load_csv: empty file '" + path + "'");
    start = 1;
  }
  if (rows.size() <= start) throw std::invalid_argument("load_csv: no data rows in '" + path + "'");
  std::size_t width = rows[start].size();
  if (width < 2) throw std::invalid_argument("load_csv: zero channels in '" + path + "'");
  int L = static_cast<int>(rows.size() - start);
  int K = static_cast<int>(width - 1);

  TimeSeriesBatch out = TimeSeriesBatch::make(1, L, K);
  for (int l = 0; l < L; ++l) {
    const auto& cells = rows[start + l];
    if (cells.size() != width) {
      throw std::invalid_argument("load_csv: ragged row " + std::to_string(l + 1) + " in '" +
                                  path + "'");
    }
    double ts;
    if (!parse_number(cells[0], ts)) {
      throw std::invalid_argument("load_csv: non-numeric timestamp at row " +
                                  std::to_string(l + 1));
    }
    out.time_index[l] = ts;
    for (int k = 0; k < K; ++k) {
      const std::string& cell = cells[k + 1];
      if (cell.empty()) {
        out.obs_mask[out.idx(0, l, k)] = 0;
        continue;
      }
      double v;
      if (!parse_number(cell, v)) {
        throw std::invalid_argument("load_csv: non-numeric cell at row " + std::to_string(l + 1) +
                                    ", column " + std::to_string(k + 2));
      }
      if (is_sentinel(v, schema.sentinels)) {
        out.obs_mask[out.idx(0, l, k)] = 0;
      } else {
        out.values[out.idx(0, l, k)] = v;
      }
    }
  }
  out.enforce_invariants();
  return out;
}

TimeSeriesBatch load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_jsonl: cannot open '" + path + "'");
  using json = nlohmann::ordered_json;

  struct Instance {
    std::vector<double> t;
    std::vector<std::vector<double>> vals;   // per channel
    std::vector<std::vector<std::uint8_t>> obs;
  };
  std::vector<Instance> instances;
  std::vector<std::string> names;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw std::invalid_argument("load_jsonl: parse error at line " + std::to_string(lineno) +
                                  ": " + e.what());
    }
    if (!j.contains("t") || !j.contains("channels")) {
      throw std::invalid_argument("load_jsonl: line " + std::to_string(lineno) +
                                  " missing 't' or 'channels'");
    }
    Instance inst;
    inst.t = j["t"].get<std::vector<double>>();
    if (names.empty()) {
      for (auto& [name, arr] : j["channels"].items()) names.push_back(name);
    }
    for (const auto& name : names) {
      if (!j["channels"].contains(name)) {
        throw std::invalid_argument("load_jsonl: line " + std::to_string(lineno) +
                                    " missing channel '" + name + "'");
      }
      const auto& arr = j["channels"][name];
      if (arr.size() != inst.t.size()) {
        throw std::invalid_argument("load_jsonl: channel '" + name + "' length mismatch at line " +
                                    std::to_string(lineno));
      }
      std::vector<double> v(arr.size(), 0.0);
      std::vector<std::uint8_t> o(arr.size(), 1);
      for (std::size_t i = 0; i < arr.size(); ++i) {
        if (arr[i].is_null()) {
          o[i] = 0;
        } else {
          v[i] = arr[i].get<double>();
        }
      }
      inst.vals.push_back(std::move(v));
      inst.obs.push_back(std::move(o));
    }
    instances.push_back(std::move(inst));
  }
  if (instances.empty()) throw std::invalid_argument("load_jsonl: no series in '" + path + "'");

  int K = static_cast<int>(names.size());
  int L = 0;
  for (const auto& inst : instances) L = std::max(L, static_cast<int>(inst.t.size()));
  TimeSeriesBatch out = TimeSeriesBatch::make(static_cast<int>(instances.size()), L, K);
  std::fill(out.obs_mask.begin(), out.obs_mask.end(), std::uint8_t(0));
  for (int b = 0; b < out.B; ++b) {
    const auto& inst = instances[b];
    int len = static_cast<int>(inst.t.size());
    int pad = L - len;  // shorter series are front-padded
    for (int l = 0; l < len; ++l) {
      out.time_index[static_cast<std::size_t>(b) * L + pad + l] = inst.t[l];
      for (int k = 0; k < K; ++k) {
        out.values[out.idx(b, pad + l, k)] = inst.vals[k][l];
        out.obs_mask[out.idx(b, pad + l, k)] = inst.obs[k][l];
      }
    }
  }
  out.enforce_invariants();
  return out;
}

void write_csv(const std::string& path, const TimeSeriesBatch& batch, int b,
               const std::vector<std::string>& channel_names) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("write_csv: cannot open '" + path + "' for writing");
  out << "t";
  for (int k = 0; k < batch.K; ++k) {
    if (k < static_cast<int>(channel_names.size())) {
      out << "," << channel_names[k];
    } else {
      out << ",c" << k;
    }
  }
  out << "\n";
  char buf[64];
  for (int l = 0; l < batch.L; ++l) {
    std::snprintf(buf, sizeof(buf), "%.12g", batch.time_index[static_cast<std::size_t>(b) * batch.L + l]);
    out << buf;
    for (int k = 0; k < batch.K; ++k) {
      out << ",";
      if (batch.observed(b, l, k)) {
        std::snprintf(buf, sizeof(buf), "%.12g", batch.val(b, l, k));
        out << buf;
      }
    }
    out << "\n";
  }
}

std::vector<std::uint8_t> load_mask_csv(const std::string& path, int L, int K) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(L) * K, 0);
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("load_mask_csv: cannot open '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(in);
    const auto& rows = j.at("mask");
    if (static_cast<int>(rows.size()) != L) {
      throw std::invalid_argument("load_mask_csv: mask row count != L");
    }
    for (int l = 0; l < L; ++l) {
      if (static_cast<int>(rows[l].size()) != K) {
        throw std::invalid_argument("load_mask_csv: mask column count != K");
      }
      for (int k = 0; k < K; ++k) {
        mask[static_cast<std::size_t>(l) * K + k] = rows[l][k].get<int>() ? 1 : 0;
      }
    }
    return mask;
  }
  CsvSchema schema;
  TimeSeriesBatch m = load_csv(path, schema);
  if (m.L != L || m.K != K) {
    throw std::invalid_argument("load_mask_csv: mask shape " + std::to_string(m.L) + "x" +
                                std::to_string(m.K) + " does not match series " +
                                std::to_string(L) + "x" + std::to_string(K));
  }
  for (int l = 0; l < L; ++l) {
    for (int k = 0; k < K; ++k) {
      mask[static_cast<std::size_t>(l) * K + k] = m.val(0, l, k) != 0.0 ? 1 : 0;
    }
  }
  return mask;
}

}  // namespace timedit
