#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "balmkt/balance_diag.hpp"
#include "balmkt/errors.hpp"
#include "balmkt/jump_markets.hpp"
#include "balmkt/linalg.hpp"
#include "balmkt/sde_engine.hpp"

namespace balmkt::io {

using json = nlohmann::json;

/// 17 significant digits, locale independent. Round-trips every double.
inline void append_double(std::string& out, double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  out.append(buf, res.ptr);
}

inline std::string format_double(double x) {
  std::string s;
  append_double(s, x);
  return s;
}

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

inline void write_file(const std::filesystem::path& file, std::string_view contents) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + file.string() + " for writing");
  os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!os) throw std::runtime_error("write to " + file.string() + " failed");
}

inline std::string read_file(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// ---- paths.csv ------------------------------------------------------------

struct PathColumns {
  int d = 0;
  bool caps = false;
  bool lifetimes = false;  // jump model: zeta_i, death_mode_i
};

inline std::string paths_csv_header(const PathColumns& cols) {
  std::string h = "path,step,t";
  for (int i = 1; i <= cols.d; ++i) h += ",kappa_" + std::to_string(i);
  if (cols.caps)
    for (int i = 1; i <= cols.d; ++i) h += ",S_" + std::to_string(i);
  if (cols.lifetimes) {
    for (int i = 1; i <= cols.d; ++i) h += ",zeta_" + std::to_string(i);
    for (int i = 1; i <= cols.d; ++i) h += ",death_mode_" + std::to_string(i);
  }
  return h + "\n";
}

/// Rows for one path. Column j of kappa (and caps) belongs to grid step steps[j].
inline void append_path_rows(std::string& out, int path, const PathGrid& grid, const std::vector<int>& steps,
                             const Mat& kappa, const Mat* caps = nullptr, const LifetimeRecord* life = nullptr) {
  if (kappa.cols() != static_cast<Eigen::Index>(steps.size())) {
    throw Error(ErrorCode::ShapeMismatch, "one step index per stored column");
  }
  if (caps && caps->cols() != kappa.cols()) throw Error(ErrorCode::ShapeMismatch, "caps and kappa columns differ");
  const std::string prefix = std::to_string(path) + ",";
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    out += prefix;
    out += std::to_string(steps[j]);
    out += ',';
    append_double(out, grid.time(steps[j]));
    for (Eigen::Index i = 0; i < kappa.rows(); ++i) {
      out += ',';
      append_double(out, kappa(i, col));
    }
    if (caps) {
      for (Eigen::Index i = 0; i < caps->rows(); ++i) {
        out += ',';
        append_double(out, (*caps)(i, col));
      }
    }
    if (life) {
      for (Eigen::Index i = 0; i < life->zeta.size(); ++i) {
        out += ',';
        append_double(out, life->zeta(i));
      }
      for (DeathMode m : life->mode) {
        out += ',';
        out += to_string(m);
      }
    }
    out += '\n';
  }
}

inline std::string paths_csv(const PathSet& set, int max_paths = -1) {
  const int n = max_paths < 0 ? set.n_paths : std::min(max_paths, set.n_paths);
  std::string out = paths_csv_header({set.d, set.has_caps(), false});
  for (int p = 0; p < n; ++p) {
    append_path_rows(out, p, set.grid, set.stored_steps, set.kappa[static_cast<std::size_t>(p)],
                     set.has_caps() ? &set.caps[static_cast<std::size_t>(p)] : nullptr);
  }
  return out;
}

inline std::string paths_csv(const JumpPathSet& set, int max_paths = -1) {
  const PathSet& ps = set.paths;
  const int n = max_paths < 0 ? ps.n_paths : std::min(max_paths, ps.n_paths);
  std::string out = paths_csv_header({ps.d, false, true});
  for (int p = 0; p < n; ++p) {
    const auto i = static_cast<std::size_t>(p);
    append_path_rows(out, p, ps.grid, ps.stored_steps, ps.kappa[i], nullptr, &set.lifetimes[i]);
  }
  return out;
}

// ---- limiting.csv ---------------------------------------------------------

inline std::string limiting_csv_header(int d) {
  std::string h = "path,class";
  for (int i = 1; i <= d; ++i) h += ",terminal_kappa_" + std::to_string(i);
  return h + ",L_terminal\n";
}

inline void append_limiting_row(std::string& out, int path, const LimitEstimate& e, double l_terminal) {
  out += std::to_string(path);
  out += ',';
  out += e.label();
  for (Eigen::Index i = 0; i < e.terminal.size(); ++i) {
    out += ',';
    append_double(out, e.terminal(i));
  }
  out += ',';
  append_double(out, l_terminal);
  out += '\n';
}

// ---- JSON -----------------------------------------------------------------

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vec(m.row(i).transpose())));
  return a;
}

inline Vec vec_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ConfigParseError, "expected an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorCode::ConfigParseError, "expected a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Mat mat_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::ConfigParseError, "expected a nonempty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Vec first = vec_from_json(j[0]);
  Mat m(rows, first.size());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vec row = vec_from_json(j[static_cast<std::size_t>(r)]);
    if (row.size() != m.cols()) throw Error(ErrorCode::ConfigParseError, "ragged matrix");
    m.row(r) = row.transpose();
  }
  return m;
}

/// With include_path, the full L path is written as well.
inline json to_json(const BalanceReport& rep, bool include_path = false) {
  json j{{"classification", to_string(rep.classification)},
         {"L_terminal", rep.l_terminal},
         {"slope_tail", rep.slope_tail}};
  if (include_path) j["L"] = to_json(rep.l_path);
  return j;
}

inline json to_json(const Partition& part) {
  return json{{"classes", part.classes}, {"intransitive", part.intransitive}};
}

inline json distance_matrix_json(const Mat& dist, double threshold) {
  return json{{"matrix", to_json(dist)}, {"threshold", threshold},
              {"partition", to_json(equivalence_classes(dist, threshold))}};
}

// ---- checkpoint moments ---------------------------------------------------

/// Cross-path mean, standard error and covariance of a d-vector at fixed grid steps.
struct CheckpointMoments {
  std::vector<int> steps;
  int n = 0;
  std::vector<Vec> sum;
  std::vector<Mat> sum_outer;

  CheckpointMoments() = default;
  CheckpointMoments(std::vector<int> steps_, int d) : steps(std::move(steps_)) {
    sum.assign(steps.size(), Vec::Zero(d));
    sum_outer.assign(steps.size(), Mat::Zero(d, d));
  }

  /// values: d x steps.size(). Call in path order for reproducible sums.
  void add(const Mat& values) {
    for (std::size_t j = 0; j < steps.size(); ++j) {
      const Vec x = values.col(static_cast<Eigen::Index>(j));
      sum[j] += x;
      sum_outer[j] += x * x.transpose();
    }
    ++n;
  }

  Vec mean(std::size_t j) const { return sum[j] / n; }

  Mat covariance(std::size_t j) const {
    const Vec m = mean(j);
    if (n < 2) return Mat::Zero(m.size(), m.size());
    return (sum_outer[j] - n * m * m.transpose()) / (n - 1);
  }

  Vec standard_error(std::size_t j) const {
    return (covariance(j).diagonal().cwiseMax(0.0) / n).cwiseSqrt();
  }

  json to_json(const PathGrid& grid, bool with_covariance = false) const {
    json out = json::array();
    for (std::size_t j = 0; j < steps.size(); ++j) {
      json c{{"step", steps[j]}, {"t", grid.time(steps[j])}, {"mean", io::to_json(mean(j))},
             {"se", io::to_json(standard_error(j))}};
      if (with_covariance) c["covariance"] = io::to_json(covariance(j));
      out.push_back(std::move(c));
    }
    return out;
  }
};

/// Evenly spaced checkpoints k * n_steps / count, k = 0..count.
inline std::vector<int> checkpoint_steps(const PathGrid& grid, int count) {
  count = std::max(count, 1);
  std::vector<int> steps;
  for (int k = 0; k <= count; ++k) {
    const int s = static_cast<int>(std::llround(static_cast<double>(k) * grid.n_steps / count));
    if (steps.empty() || steps.back() != s) steps.push_back(s);
  }
  return steps;
}

/// Means and covariances of kappa at the checkpoints that were stored.
inline json summary_json(const PathSet& set, int count = 4) {
  std::vector<int> steps;
  std::vector<Eigen::Index> cols;
  for (int s : checkpoint_steps(set.grid, count)) {
    if (auto c = set.column_of(s)) {
      steps.push_back(s);
      cols.push_back(*c);
    }
  }
  CheckpointMoments m(steps, set.d);
  Mat values(set.d, static_cast<Eigen::Index>(cols.size()));
  for (const auto& k : set.kappa) {
    for (std::size_t j = 0; j < cols.size(); ++j) values.col(static_cast<Eigen::Index>(j)) = k.col(cols[j]);
    m.add(values);
  }
  return json{{"n_paths", set.n_paths}, {"seed", set.seed}, {"d", set.d},
              {"checkpoints", m.to_json(set.grid, true)}};
}

}  // namespace balmkt::io
