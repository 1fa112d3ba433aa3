#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "balmkt/balance_diag.hpp"
#include "balmkt/errors.hpp"
#include "balmkt/io.hpp"
#include "balmkt/jump_markets.hpp"
#include "balmkt/market_model.hpp"
#include "balmkt/parallel.hpp"
#include "balmkt/sde_engine.hpp"
#include "balmkt/version.hpp"

namespace balmkt::scenario {

using json = nlohmann::json;

enum class Model { Continuous, Jump };

struct Diagnostics {
  bool balance = true;
  bool segregation = true;
  bool limiting_distribution = true;
  bool lln = false;
};

struct Classifier {
  ClassifierThresholds outcome;
  double atom_eps = 0.01;
  double distance_threshold = 25.0;
};

struct OutputOptions {
  std::string dir = "out";
  int csv_paths = 10;  // paths written to paths.csv
  int csv_stride = 0;  // 0: about 1000 rows per path
};

/// Fully resolved scenario. `source` is the config as written, which is what
/// summary.json records for replay.
struct ScenarioConfig {
  std::string name;
  std::string builtin;
  Model model = Model::Continuous;

  int d = 2;
  Vec a;  // continuous model, unless balanced
  Mat c;
  double r = 0.0;
  Vec s0;
  bool balanced = false;  // a = c kappa + r 1

  std::string jump_rule;  // "atoms" or "death_example"
  std::vector<JumpAtom> atoms;

  double horizon = 1.0;
  double dt = 1e-3;
  int n_paths = 1000;
  std::uint64_t seed = 1;
  int checkpoints = 4;

  Diagnostics diagnostics;
  Classifier classifier;
  OutputOptions output;

  json source;

  PathGrid grid() const { return PathGrid::from_horizon(horizon, dt); }

  int csv_stride() const {
    if (output.csv_stride > 0) return output.csv_stride;
    return std::max(1, (grid().n_steps + 999) / 1000);
  }
};

// ---- builtins -------------------------------------------------------------

struct BuiltinInfo {
  std::string name;
  std::string description;
};

inline std::vector<BuiltinInfo> list_builtins() {
  return {
      {"sec6_case_a0", "two companies, S0 = 1, dS1 = S1 dW (a = 0, sigma = 1); balanced, company 0 takes all"},
      {"sec6_case_band", "two companies, a = sigma^2 / 4, sigma = 1; capital concentrates on an unbalanced set"},
      {"sec6_case_critical", "two companies, a = sigma^2 / 2, sigma = 1; unbalanced, kappa oscillates between 0 and 1"},
      {"example_7_2", "two companies, one jump at rate 1 before 2 log 2, otherwise company 1 vanishes at 2 log 2"},
      {"perfect_balance_demo", "three companies with a = c kappa + r 1; every kappa^i is a martingale, L = 0"},
  };
}

namespace detail {

inline json section6(double a1, double horizon, int n_paths, bool lln) {
  return json{{"model", "continuous"},
              {"market", {{"a", {0.0, a1}}, {"c", {{0.0, 0.0}, {0.0, 1.0}}}, {"r", 0.0}, {"s0", {1.0, 1.0}}}},
              {"grid", {{"T", horizon}, {"dt", 0.01}}},
              {"n_paths", n_paths},
              {"seed", 20240601},
              {"diagnostics", {{"balance", true}, {"segregation", true}, {"limiting_distribution", true}, {"lln", lln}}},
              {"output", {{"csv_paths", 10}, {"csv_stride", 100}}}};
}

}  // namespace detail

/// Full default config of a builtin; throws ConfigParseError for unknown names.
inline json builtin_config(const std::string& name) {
  json j;
  if (name == "sec6_case_a0") {
    j = detail::section6(0.0, 100.0, 1000, false);
  } else if (name == "sec6_case_band") {
    j = detail::section6(0.25, 100.0, 1000, true);
  } else if (name == "sec6_case_critical") {
    j = detail::section6(0.5, 1000.0, 1000, true);
  } else if (name == "example_7_2") {
    j = json{{"model", "jump"},
             {"market", {{"c", {{0.0, 0.0}, {0.0, 0.0}}}, {"r", 0.0}, {"s0", {1.0, 1.0}}}},
             {"jumps", {{"rule", "death_example"}}},
             {"grid", {{"T", 3.0}, {"dt", 1e-4}}},
             {"n_paths", 10000},
             {"seed", 20240601},
             {"diagnostics",
              {{"balance", false}, {"segregation", false}, {"limiting_distribution", true}, {"lln", true}}},
             {"output", {{"csv_paths", 10}, {"csv_stride", 100}}}};
  } else if (name == "perfect_balance_demo") {
    j = json{{"model", "continuous"},
             {"market",
              {{"balanced", true},
               {"c", {{0.04, 0.01, 0.0}, {0.01, 0.09, 0.02}, {0.0, 0.02, 0.16}}},
               {"r", 0.02},
               {"s0", {1.0, 2.0, 3.0}}}},
             {"grid", {{"T", 10.0}, {"dt", 0.01}}},
             {"n_paths", 2000},
             {"seed", 20240601},
             {"diagnostics",
              {{"balance", true}, {"segregation", true}, {"limiting_distribution", false}, {"lln", false}}},
             {"output", {{"csv_paths", 10}, {"csv_stride", 10}}}};
  } else {
    throw Error(ErrorCode::ConfigParseError, "unknown builtin '" + name + "'");
  }
  j["name"] = name;
  j["builtin"] = name;
  return j;
}

// ---- parsing --------------------------------------------------------------

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::ConfigParseError, where + " must be an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || item.key() == k;
    if (!ok) throw Error(ErrorCode::ConfigParseError, "unknown key '" + item.key() + "' in " + where);
  }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ConfigParseError, where + "." + key + " has the wrong type");
  }
}

inline double number(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj.at(key).is_number()) {
    throw Error(ErrorCode::ConfigParseError, where + "." + key + " must be a number");
  }
  return obj.at(key).get<double>();
}

// Rewraps shape errors from the JSON helpers with the field name.
template <class Fn>
auto field(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigParseError, name + ": " + e.what());
  }
}

}  // namespace detail

/// Parses a config. A `builtin` tag supplies defaults; keys given next to it
/// override them (JSON merge patch).
inline ScenarioConfig parse_config(const json& source) {
  using detail::check_keys;
  using detail::get_or;
  if (!source.is_object()) throw Error(ErrorCode::ConfigParseError, "config must be a JSON object");
  check_keys(source,
             {"name", "builtin", "model", "market", "jumps", "grid", "n_paths", "seed", "checkpoints", "diagnostics",
              "classifier", "output"},
             "config");
  json j = source;
  if (source.contains("builtin")) {
    if (!source["builtin"].is_string()) throw Error(ErrorCode::ConfigParseError, "builtin must be a string");
    j = builtin_config(source["builtin"].get<std::string>());
    j.merge_patch(source);
  }

  ScenarioConfig cfg;
  cfg.source = source;
  cfg.name = get_or<std::string>(j, "name", "scenario", "config");
  cfg.builtin = get_or<std::string>(j, "builtin", "", "config");
  const std::string model = get_or<std::string>(j, "model", "continuous", "config");
  if (model == "continuous") {
    cfg.model = Model::Continuous;
  } else if (model == "jump") {
    cfg.model = Model::Jump;
  } else {
    throw Error(ErrorCode::ConfigParseError, "model must be 'continuous' or 'jump'");
  }

  if (!j.contains("market")) throw Error(ErrorCode::ConfigParseError, "config.market is required");
  const json& m = j["market"];
  check_keys(m, {"a", "c", "r", "s0", "balanced"}, "market");
  if (!m.contains("c") || !m.contains("s0")) throw Error(ErrorCode::ConfigParseError, "market needs c and s0");
  cfg.c = detail::field("market.c", [&] { return io::mat_from_json(m["c"]); });
  cfg.s0 = detail::field("market.s0", [&] { return io::vec_from_json(m["s0"]); });
  cfg.d = static_cast<int>(cfg.s0.size());
  cfg.r = m.contains("r") ? detail::number(m, "r", "market") : 0.0;
  cfg.balanced = get_or<bool>(m, "balanced", false, "market");
  if (cfg.model == Model::Continuous) {
    if (cfg.balanced == m.contains("a")) {
      throw Error(ErrorCode::ConfigParseError, "continuous market needs exactly one of a and balanced = true");
    }
    if (!cfg.balanced) cfg.a = detail::field("market.a", [&] { return io::vec_from_json(m["a"]); });
  } else if (m.contains("a") || cfg.balanced) {
    throw Error(ErrorCode::ConfigParseError, "jump markets are balanced by construction; drop market.a/balanced");
  }
  if (cfg.d < 1 || cfg.c.rows() != cfg.d || cfg.c.cols() != cfg.d || (!cfg.balanced && cfg.model == Model::Continuous &&
                                                                     cfg.a.size() != cfg.d)) {
    throw Error(ErrorCode::ConfigParseError, "market dimensions disagree");
  }

  if (cfg.model == Model::Jump) {
    if (!j.contains("jumps")) throw Error(ErrorCode::ConfigParseError, "jump model needs config.jumps");
    const json& jj = j["jumps"];
    check_keys(jj, {"rule", "atoms"}, "jumps");
    cfg.jump_rule = get_or<std::string>(jj, "rule", "atoms", "jumps");
    if (cfg.jump_rule == "death_example") {
      if (cfg.d != 2) throw Error(ErrorCode::ConfigParseError, "death_example rule needs d = 2");
    } else if (cfg.jump_rule == "atoms") {
      if (!jj.contains("atoms") || !jj["atoms"].is_array()) {
        throw Error(ErrorCode::ConfigParseError, "jumps.atoms must be an array");
      }
      for (const auto& atom : jj["atoms"]) {
        check_keys(atom, {"weight", "x"}, "jumps.atoms[]");
        JumpAtom ja;
        ja.weight = detail::number(atom, "weight", "jumps.atoms[]");
        ja.x = detail::field("jumps.atoms[].x", [&] { return io::vec_from_json(atom.at("x")); });
        if (ja.x.size() != cfg.d) throw Error(ErrorCode::ConfigParseError, "jump size has wrong length");
        cfg.atoms.push_back(std::move(ja));
      }
    } else {
      throw Error(ErrorCode::ConfigParseError, "jumps.rule must be 'atoms' or 'death_example'");
    }
  } else if (j.contains("jumps")) {
    throw Error(ErrorCode::ConfigParseError, "config.jumps only applies to the jump model");
  }

  if (!j.contains("grid")) throw Error(ErrorCode::ConfigParseError, "config.grid is required");
  check_keys(j["grid"], {"T", "dt"}, "grid");
  cfg.horizon = detail::number(j["grid"], "T", "grid");
  cfg.dt = detail::number(j["grid"], "dt", "grid");
  if (!(cfg.horizon > 0.0) || !(cfg.dt > 0.0)) throw Error(ErrorCode::ConfigParseError, "grid needs T > 0, dt > 0");

  cfg.n_paths = get_or<int>(j, "n_paths", cfg.n_paths, "config");
  if (cfg.n_paths < 1) throw Error(ErrorCode::ConfigParseError, "n_paths must be >= 1");
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed, "config");
  cfg.checkpoints = get_or<int>(j, "checkpoints", cfg.checkpoints, "config");
  if (cfg.checkpoints < 1) throw Error(ErrorCode::ConfigParseError, "checkpoints must be >= 1");

  if (j.contains("diagnostics")) {
    const json& dg = j["diagnostics"];
    check_keys(dg, {"balance", "segregation", "limiting_distribution", "lln"}, "diagnostics");
    cfg.diagnostics.balance = get_or<bool>(dg, "balance", cfg.diagnostics.balance, "diagnostics");
    cfg.diagnostics.segregation = get_or<bool>(dg, "segregation", cfg.diagnostics.segregation, "diagnostics");
    cfg.diagnostics.limiting_distribution =
        get_or<bool>(dg, "limiting_distribution", cfg.diagnostics.limiting_distribution, "diagnostics");
    cfg.diagnostics.lln = get_or<bool>(dg, "lln", cfg.diagnostics.lln, "diagnostics");
  }
  if (j.contains("classifier")) {
    const json& cl = j["classifier"];
    check_keys(cl, {"eps_slope", "l_cap", "atom_eps", "distance_threshold"}, "classifier");
    auto& c = cfg.classifier;
    c.outcome.eps_slope = get_or<double>(cl, "eps_slope", c.outcome.eps_slope, "classifier");
    c.outcome.l_cap = get_or<double>(cl, "l_cap", c.outcome.l_cap, "classifier");
    c.atom_eps = get_or<double>(cl, "atom_eps", c.atom_eps, "classifier");
    c.distance_threshold = get_or<double>(cl, "distance_threshold", c.distance_threshold, "classifier");
    if (!(c.outcome.eps_slope > 0.0) || !(c.outcome.l_cap > 0.0) || !(c.atom_eps > 0.0 && c.atom_eps < 0.5) ||
        !(c.distance_threshold > 0.0)) {
      throw Error(ErrorCode::ConfigParseError, "classifier thresholds out of range");
    }
  }
  if (j.contains("output")) {
    const json& out = j["output"];
    check_keys(out, {"dir", "csv_paths", "csv_stride"}, "output");
    cfg.output.dir = get_or<std::string>(out, "dir", cfg.output.dir, "output");
    cfg.output.csv_paths = get_or<int>(out, "csv_paths", cfg.output.csv_paths, "output");
    cfg.output.csv_stride = get_or<int>(out, "csv_stride", cfg.output.csv_stride, "output");
    if (cfg.output.csv_paths < 0 || cfg.output.csv_stride < 0) {
      throw Error(ErrorCode::ConfigParseError, "csv_paths and csv_stride must be >= 0");
    }
  }
  return cfg;
}

inline ScenarioConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigParseError, e.what());
  }
  return parse_config(j);
}

inline ScenarioConfig load_config(const std::filesystem::path& file) {
  std::string text;
  try {
    text = io::read_file(file);
  } catch (const std::runtime_error& e) {
    throw Error(ErrorCode::ConfigParseError, e.what());
  }
  return parse_config_text(text);
}

// ---- models ---------------------------------------------------------------

inline MarketParams continuous_market(const ScenarioConfig& cfg) {
  const MatrixSpec c = MatrixSpec::constant(cfg.c);
  const ScalarSpec r = ScalarSpec::constant(cfg.r);
  if (cfg.balanced) return balanced_market(c, r, cfg.s0);
  return MarketParams{cfg.d, VectorSpec::constant(cfg.a), c, r, cfg.s0};
}

inline JumpMarket jump_market(const ScenarioConfig& cfg) {
  if (cfg.jump_rule == "death_example") return death_example::market();
  return JumpMarket{cfg.d, MatrixSpec::constant(cfg.c), ScalarSpec::constant(cfg.r), JumpSpec::constant(cfg.atoms),
                    std::nullopt};
}

// ---- running --------------------------------------------------------------

/// Everything a run produces, before anything touches the disk.
struct ScenarioOutputs {
  std::map<std::string, std::string> files;  // file name -> contents
  json summary;

  const std::string& file(const std::string& name) const { return files.at(name); }
};

namespace detail {

// Per-path reduction, computed on a worker.
struct PathOutcome {
  Mat kappa_checkpoints;
  std::optional<BalanceReport> balance;  // l_path trimmed to the checkpoints
  Vec l_checkpoints;
  Mat distances;
  LimitEstimate limit;
  std::optional<LlnResult> lln;
  std::optional<LifetimeRecord> life;
  int n_jumps = 0;
  std::optional<DeathPathSummary> death;
  std::string csv_rows;
};

inline Mat columns_at(const Mat& full, const std::vector<int>& steps) { return balmkt::detail::select_columns(full, steps); }

inline Vec entries_at(const Vec& full, const std::vector<int>& steps) {
  Vec out(static_cast<Eigen::Index>(steps.size()));
  for (std::size_t j = 0; j < steps.size(); ++j) out(static_cast<Eigen::Index>(j)) = full(steps[j]);
  return out;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& x) {
  MeanSe out;
  if (x.empty()) return out;
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += v;
  out.mean = s / n;
  if (x.size() > 1) {
    double ss = 0.0;
    for (double v : x) ss += (v - out.mean) * (v - out.mean);
    out.se = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

inline json mean_se_json(const std::vector<double>& x) {
  const MeanSe m = mean_se(x);
  return json{{"mean", m.mean}, {"se", m.se}, {"n", x.size()}};
}

}  // namespace detail

/// Runs the scenario on `threads` workers. Outputs depend only on the config
/// and the engine version: each path has its own random substream and the
/// reduction runs in path order on the calling thread.
inline ScenarioOutputs run_scenario(const ScenarioConfig& cfg, int threads = default_thread_count()) {
  const PathGrid grid = cfg.grid();
  grid.validate();
  const std::vector<int> ck_steps = io::checkpoint_steps(grid, cfg.checkpoints);
  const std::vector<int> csv_steps = stored_step_indices(grid, cfg.csv_stride());
  const int csv_paths = std::min(cfg.output.csv_paths, cfg.n_paths);
  const Diagnostics& dg = cfg.diagnostics;
  const Classifier& cl = cfg.classifier;
  const int d = cfg.d;
  const bool is_jump = cfg.model == Model::Jump;
  const bool death_rule = is_jump && cfg.jump_rule == "death_example";
  if (death_rule) check_death_grid(grid);

  std::optional<MarketParams> params;
  std::optional<JumpMarket> jmarket;
  Vec kappa0 = cfg.s0 / cfg.s0.sum();
  if (is_jump) {
    if (!is_in_simplex(kappa0, 1e-12) || (cfg.s0.array() < 0.0).any()) {
      throw Error(ErrorCode::NonPositiveInitialCap, "initial capitalizations must be nonnegative");
    }
    jmarket = jump_market(cfg);
    psd_factor(cfg.c);  // surfaces covariance errors before the workers start
  } else {
    params = continuous_market(cfg);
    validate_params(*params);
  }

  auto outcomes = map_indices(static_cast<std::size_t>(cfg.n_paths), threads, [&](std::size_t pi) {
    const auto p = static_cast<int>(pi);
    detail::PathOutcome o;
    const Mat* kappa = nullptr;
    Vec l_path;
    if (is_jump) {
      JumpPath jp = simulate_jump_path(jmarket->c, jmarket->jumps, kappa0, grid, cfg.seed, pi);
      kappa = &jp.path.kappa;
      const JumpPathView view{*jmarket, grid, jp.path.kappa, jp.jump_steps};
      if (dg.balance) l_path = loss_of_balance_jump(view);
      if (dg.segregation) {
        o.distances = Mat::Zero(d, d);
        for (int i = 0; i < d; ++i)
          for (int j = i + 1; j < d; ++j) o.distances(i, j) = o.distances(j, i) = pairwise_distance_jump(view, i, j);
      }
      o.n_jumps = static_cast<int>(jp.jump_steps.size());
      if (dg.lln) {
        LlnResult res;
        res.ratio = jump_count_ratio(o.n_jumps, jp.intensity_integral);
        res.informative = jp.intensity_integral > 100.0;
        res.converged = res.informative && std::abs(res.ratio - 1.0) < 0.05;
        o.lln = res;
      }
      if (death_rule) o.death = summarize_death_path(jp, grid);
      o.life = jp.life;
      o.kappa_checkpoints = detail::columns_at(*kappa, ck_steps);
      o.limit = classify_limit(tail_summary(*kappa, grid), cl.atom_eps);
      if (p < csv_paths) {
        io::append_path_rows(o.csv_rows, p, grid, csv_steps, detail::columns_at(*kappa, csv_steps), nullptr, &jp.life);
      }
    } else {
      SimulatedPath sp = simulate_caps_path(*params, grid, cfg.seed, pi);
      kappa = &sp.kappa;
      const PathView view{*params, grid, sp.kappa, sp.dW};
      if (dg.balance) l_path = loss_of_balance(view);
      if (dg.segregation) o.distances = distance_matrix(view);
      if (dg.lln) o.lln = relative_wealth_lln(view);
      o.kappa_checkpoints = detail::columns_at(*kappa, ck_steps);
      o.limit = classify_limit(tail_summary(*kappa, grid), cl.atom_eps);
      if (p < csv_paths) {
        const Mat caps = detail::columns_at(sp.caps, csv_steps);
        io::append_path_rows(o.csv_rows, p, grid, csv_steps, detail::columns_at(*kappa, csv_steps), &caps);
      }
    }
    if (dg.balance) {
      o.l_checkpoints = detail::entries_at(l_path, ck_steps);
      BalanceReport rep = classify_outcome(std::move(l_path), grid, cl.outcome);
      rep.l_path = Vec();
      o.balance = std::move(rep);
    }
    return o;
  });

  // ---- reduction, in path order ----
  ScenarioOutputs out;
  std::string paths = io::paths_csv_header({d, !is_jump, is_jump});
  for (int p = 0; p < csv_paths; ++p) paths += outcomes[static_cast<std::size_t>(p)].csv_rows;

  io::CheckpointMoments kappa_moments(ck_steps, d);
  io::CheckpointMoments l_moments(ck_steps, 1);
  for (const auto& o : outcomes) {
    kappa_moments.add(o.kappa_checkpoints);
    if (o.balance) l_moments.add(o.l_checkpoints.transpose());
  }

  json summary;
  summary["engine_version"] = kEngineVersion;
  summary["name"] = cfg.name;
  summary["seed"] = cfg.seed;
  summary["n_paths"] = cfg.n_paths;
  summary["grid"] = {{"T", grid.horizon()}, {"dt", grid.dt}, {"n_steps", grid.n_steps}};
  summary["config"] = cfg.source;
  summary["checkpoints"] = kappa_moments.to_json(grid);

  std::vector<int> unbalanced_paths;
  if (dg.balance) {
    int counts[3] = {0, 0, 0};
    json per_path = json::array();
    std::vector<double> l_terminal;
    for (const auto& o : outcomes) {
      ++counts[static_cast<int>(o.balance->classification)];
      l_terminal.push_back(o.balance->l_terminal);
      per_path.push_back(io::to_json(*o.balance));
    }
    for (std::size_t p = 0; p < outcomes.size(); ++p)
      if (outcomes[p].balance->classification == Outcome::Unbalanced) unbalanced_paths.push_back(static_cast<int>(p));
    const double n = cfg.n_paths;
    json counts_json{{"Balanced", counts[0]}, {"Unbalanced", counts[1]}, {"Indeterminate", counts[2]}};
    json fractions{{"Balanced", counts[0] / n}, {"Unbalanced", counts[1] / n}, {"Indeterminate", counts[2] / n}};
    json balance{{"thresholds", {{"eps_slope", cl.outcome.eps_slope}, {"l_cap", cl.outcome.l_cap}}},
                 {"counts", counts_json},
                 {"fractions", fractions},
                 {"L_terminal", detail::mean_se_json(l_terminal)},
                 {"L_checkpoints", l_moments.to_json(grid)},
                 {"paths", std::move(per_path)}};
    out.files["balance.json"] = balance.dump(2) + "\n";
    summary["balance"] = {{"counts", counts_json}, {"fractions", fractions},
                          {"L_terminal", detail::mean_se_json(l_terminal)}, {"L_checkpoints", l_moments.to_json(grid)}};
  }

  if (dg.segregation) {
    Mat sum = Mat::Zero(d, d);
    int segregated = 0;
    json per_path = json::array();
    for (const auto& o : outcomes) {
      sum += o.distances;
      const Partition part = equivalence_classes(o.distances, cl.distance_threshold);
      if (static_cast<int>(part.classes.size()) == d) ++segregated;
      per_path.push_back(io::distance_matrix_json(o.distances, cl.distance_threshold));
    }
    const Mat mean = sum / cfg.n_paths;
    json dist{{"threshold", cl.distance_threshold},
              {"mean_matrix", io::to_json(mean)},
              {"segregated_fraction", static_cast<double>(segregated) / cfg.n_paths},
              {"paths", std::move(per_path)}};
    out.files["distances.json"] = dist.dump(2) + "\n";
    summary["segregation"] = {{"mean_matrix", io::to_json(mean)},
                              {"segregated_fraction", static_cast<double>(segregated) / cfg.n_paths}};
  }

  if (dg.limiting_distribution) {
    LimitingDistribution dist;
    dist.atom_counts.assign(static_cast<std::size_t>(d), 0);
    std::string csv = io::limiting_csv_header(d);
    for (std::size_t p = 0; p < outcomes.size(); ++p) {
      const LimitEstimate& e = outcomes[p].limit;
      switch (e.cls) {
        case LimitClass::Atom: ++dist.atom_counts[static_cast<std::size_t>(e.atom)]; break;
        case LimitClass::Interior: ++dist.interior; break;
        case LimitClass::Oscillating: ++dist.oscillating; break;
        case LimitClass::Indeterminate: ++dist.indeterminate; break;
      }
      const double lt = outcomes[p].balance ? outcomes[p].balance->l_terminal : std::numeric_limits<double>::quiet_NaN();
      io::append_limiting_row(csv, static_cast<int>(p), e, lt);
    }
    if (2 * dist.indeterminate > cfg.n_paths) {
      throw Error(ErrorCode::HorizonTooShort, std::to_string(dist.indeterminate) + " of " +
                                                 std::to_string(cfg.n_paths) +
                                                 " paths have not settled; lengthen T or disable limiting_distribution");
    }
    out.files["limiting.csv"] = std::move(csv);
    const double n = cfg.n_paths;
    json atoms = json::array();
    for (int c : dist.atom_counts) atoms.push_back(c);
    json lim{{"atom_counts", atoms},
             {"interior", dist.interior},
             {"oscillating", dist.oscillating},
             {"indeterminate", dist.indeterminate},
             {"oscillating_fraction", dist.oscillating / n}};
    if (dg.balance) {
      int osc = 0;
      for (int p : unbalanced_paths) osc += outcomes[static_cast<std::size_t>(p)].limit.cls == LimitClass::Oscillating;
      lim["oscillating_among_unbalanced"] =
          unbalanced_paths.empty() ? 0.0 : static_cast<double>(osc) / static_cast<double>(unbalanced_paths.size());
    }
    summary["limiting"] = std::move(lim);
  }

  if (dg.lln) {
    std::vector<double> ratios;
    int informative = 0;
    int converged = 0;
    for (const auto& o : outcomes) {
      if (std::isfinite(o.lln->ratio)) ratios.push_back(o.lln->ratio);
      informative += o.lln->informative;
      converged += o.lln->converged;
    }
    summary["lln"] = {{"statistic", is_jump ? "jump_count_over_compensator" : "martingale_over_quadratic_variation"},
                      {"ratio", detail::mean_se_json(ratios)},
                      {"informative", informative},
                      {"converged", converged}};
  }

  if (is_jump) {
    std::vector<int> vanish(static_cast<std::size_t>(d), 0);
    std::vector<int> jump_deaths(static_cast<std::size_t>(d), 0);
    long total_jumps = 0;
    for (const auto& o : outcomes) {
      total_jumps += o.n_jumps;
      for (int i = 0; i < d; ++i) {
        const DeathMode m = o.life->mode[static_cast<std::size_t>(i)];
        vanish[static_cast<std::size_t>(i)] += m == DeathMode::ContinuousVanish;
        jump_deaths[static_cast<std::size_t>(i)] += m == DeathMode::JumpToZero;
      }
    }
    summary["jumps"] = {{"total", total_jumps},
                        {"deaths_continuous_vanish", vanish},
                        {"deaths_jump_to_zero", jump_deaths}};
  }

  if (death_rule) {
    std::vector<DeathPathSummary> summaries;
    for (const auto& o : outcomes) summaries.push_back(*o.death);
    const DeathExampleReport rep = death_example_report(grid, std::move(summaries));
    summary["analytic_match"] = {{"sup_error", rep.sup_error},
                                 {"max_death_time_error", rep.max_death_time_error},
                                 {"tolerance", 5.0 * grid.dt},
                                 {"all_continuous_vanish", rep.all_continuous_vanish},
                                 {"dying_fraction", rep.dying_fraction},
                                 {"dying_expected", 0.25},
                                 {"dying_se", rep.dying_se},
                                 {"passed", rep.analytic_match(5.0) &&
                                                std::abs(rep.dying_fraction - 0.25) <= 3.0 * rep.dying_se}};
  }

  json digests;
  digests["paths.csv"] = io::fnv1a_hex(paths);
  if (out.files.count("limiting.csv")) digests["limiting.csv"] = io::fnv1a_hex(out.files["limiting.csv"]);
  summary["digests"] = std::move(digests);
  out.files["paths.csv"] = std::move(paths);
  out.summary = summary;
  out.files["summary.json"] = summary.dump(2) + "\n";
  return out;
}

inline void write_outputs(const ScenarioOutputs& outputs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, contents] : outputs.files) io::write_file(dir / name, contents);
}

// ---- replay ---------------------------------------------------------------

struct ReplayResult {
  ScenarioOutputs outputs;
  std::string recorded_digest;
  std::string replayed_digest;
  bool identical() const { return recorded_digest == replayed_digest; }
};

/// Reruns the config stored in a summary. `seed_override` deliberately breaks
/// the match; it exists to show the digest is sensitive to the seed.
inline ReplayResult replay(const json& summary, int threads = default_thread_count(),
                           std::optional<std::uint64_t> seed_override = std::nullopt) {
  if (!summary.is_object() || !summary.contains("engine_version") || !summary.contains("config")) {
    throw Error(ErrorCode::ConfigParseError, "summary lacks engine_version or config");
  }
  const std::string recorded = summary["engine_version"].get<std::string>();
  if (recorded != kEngineVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "summary was written by engine " + recorded + ", this is " + std::string(kEngineVersion));
  }
  json source = summary["config"];
  if (seed_override) source["seed"] = *seed_override;
  ReplayResult res;
  res.outputs = run_scenario(parse_config(source), threads);
  res.recorded_digest = summary.at("digests").at("paths.csv").get<std::string>();
  res.replayed_digest = res.outputs.summary["digests"]["paths.csv"].get<std::string>();
  return res;
}

}  // namespace balmkt::scenario
