// balmkt: run, list, replay and validate simulation scenarios.
//
//   balmkt list
//   balmkt validate --config cfg.json
//   balmkt run --config cfg.json [--out DIR] [--seed N] [--threads N]
//   balmkt run --builtin sec6_case_a0 --out runs/a0
//   balmkt replay --summary runs/a0/summary.json --out runs/a0_replay
//
// Exit codes: 0 ok, 1 model/numerical error, 2 bad config, 3 engine version
// mismatch, 4 replay digest differs.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "balmkt/errors.hpp"
#include "balmkt/io.hpp"
#include "balmkt/parallel.hpp"
#include "balmkt/scenario.hpp"
#include "balmkt/version.hpp"

namespace {

using balmkt::Error;
using balmkt::ErrorCode;
using nlohmann::json;
namespace sc = balmkt::scenario;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigParseError: return 2;
    case ErrorCode::VersionMismatch: return 3;
    default: return 1;
  }
}

json load_json(const std::string& file) {
  std::string text;
  try {
    text = balmkt::io::read_file(file);
  } catch (const std::runtime_error& e) {
    throw Error(ErrorCode::ConfigParseError, e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigParseError, file + ": " + e.what());
  }
}

// Config source from --config or --builtin, with --seed folded in so that the
// recorded config replays the same run.
json config_source(const std::string& config_file, const std::string& builtin, std::optional<std::uint64_t> seed) {
  json source;
  if (!config_file.empty()) {
    source = load_json(config_file);
  } else if (!builtin.empty()) {
    source = json{{"builtin", builtin}};
  } else {
    throw Error(ErrorCode::ConfigParseError, "give --config or --builtin");
  }
  if (seed) {
    if (!source.is_object()) throw Error(ErrorCode::ConfigParseError, "config must be a JSON object");
    source["seed"] = *seed;
  }
  return source;
}

void print_headline(const json& summary, const std::filesystem::path& dir) {
  std::cout << "wrote " << dir.string() << "  paths.csv digest " << summary["digests"]["paths.csv"].get<std::string>()
            << "\n";
  if (summary.contains("balance")) {
    const auto& f = summary["balance"]["fractions"];
    std::cout << "balanced " << f["Balanced"] << "  unbalanced " << f["Unbalanced"] << "  indeterminate "
              << f["Indeterminate"] << "\n";
  }
  if (summary.contains("limiting")) {
    const auto& l = summary["limiting"];
    std::cout << "limit classes: atoms " << l["atom_counts"] << "  interior " << l["interior"] << "  oscillating "
              << l["oscillating"] << "  indeterminate " << l["indeterminate"] << "\n";
  }
  if (summary.contains("analytic_match")) {
    const auto& a = summary["analytic_match"];
    std::cout << "analytic match: sup error " << a["sup_error"] << ", death time error " << a["max_death_time_error"]
              << " (tol " << a["tolerance"] << "), dying fraction " << a["dying_fraction"] << " +- " << a["dying_se"]
              << (a["passed"].get<bool>() ? "  ok" : "  MISMATCH") << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced-market simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(balmkt::kEngineVersion));

  std::string config_file;
  std::string builtin;
  std::string summary_file;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  int threads = balmkt::default_thread_count();

  auto* list = app.add_subcommand("list", "print the builtin scenarios");

  auto* validate = app.add_subcommand("validate", "parse and check a config without running it");
  validate->add_option("--config", config_file, "scenario JSON")->check(CLI::ExistingFile);
  validate->add_option("--builtin", builtin, "builtin scenario name");

  auto* run = app.add_subcommand("run", "run a scenario and write its outputs");
  run->add_option("--config", config_file, "scenario JSON")->check(CLI::ExistingFile);
  run->add_option("--builtin", builtin, "builtin scenario name");
  run->add_option("--out", out_dir, "output directory (overrides output.dir)");
  run->add_option("--seed", seed, "seed override, recorded in summary.json");
  run->add_option("--threads", threads, "worker threads (default: BM_THREADS or all cores)")->check(CLI::PositiveNumber);

  auto* rep = app.add_subcommand("replay", "rerun the config recorded in a summary.json and compare digests");
  rep->add_option("--summary,--config", summary_file, "summary.json of an earlier run")
      ->required()
      ->check(CLI::ExistingFile);
  rep->add_option("--out", out_dir, "output directory (default: <summary dir>/replay)");
  rep->add_option("--seed", seed, "seed override (the digest will then differ)");
  rep->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (list->parsed()) {
      for (const auto& b : sc::list_builtins()) std::cout << b.name << "  " << b.description << "\n";
      return 0;
    }
    if (validate->parsed()) {
      const sc::ScenarioConfig cfg = sc::parse_config(config_source(config_file, builtin, std::nullopt));
      const balmkt::PathGrid grid = cfg.grid();
      std::cout << "ok: " << cfg.name << " (" << (cfg.model == sc::Model::Jump ? "jump" : "continuous")
                << ", d = " << cfg.d << ", " << cfg.n_paths << " paths x " << grid.n_steps << " steps, seed "
                << cfg.seed << ")\n";
      return 0;
    }
    if (run->parsed()) {
      const sc::ScenarioConfig cfg = sc::parse_config(config_source(config_file, builtin, seed));
      const std::filesystem::path dir = out_dir.empty() ? cfg.output.dir : out_dir;
      const sc::ScenarioOutputs outputs = sc::run_scenario(cfg, threads);
      sc::write_outputs(outputs, dir);
      print_headline(outputs.summary, dir);
      return 0;
    }
    if (rep->parsed()) {
      const json summary = load_json(summary_file);
      const std::filesystem::path dir =
          out_dir.empty() ? std::filesystem::path(summary_file).parent_path() / "replay" : std::filesystem::path(out_dir);
      const sc::ReplayResult res = sc::replay(summary, threads, seed);
      sc::write_outputs(res.outputs, dir);
      std::cout << "recorded " << res.recorded_digest << "\nreplayed " << res.replayed_digest << "\n"
                << (res.identical() ? "identical" : "DIFFERENT") << "\n";
      return res.identical() ? 0 : 4;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
