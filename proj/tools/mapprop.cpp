// Command-line front end: train, verify, plot-data.

#include "mapprop/experiment.hpp"
#include "mapprop/oracles.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRunFailure = 2;

std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("MAPPROP_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  try {
    std::size_t pos = 0;
    const auto s = std::stoull(v, &pos);
    if (pos != std::string(v).size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw mapprop::ConfigError(std::string("MAPPROP_SEED must be an unsigned integer, got '") + v + "'");
  }
}

int train(const std::string& config_path, const std::string& seeds, const std::string& out,
          const std::string& trajectories) {
  auto kv = mapprop::KeyValueConfig::load(config_path);
  if (const auto s = seed_from_env()) kv.set("seeds", std::to_string(*s));
  if (!seeds.empty()) kv.set("seeds", seeds);
  if (!out.empty()) kv.set("output_dir", out);
  if (!trajectories.empty()) kv.set("trajectories", trajectories);
  const auto cfg = mapprop::experiment_from_kv(kv);
  const auto records = mapprop::run_experiment(cfg);
  const auto summary = mapprop::summarize(records);
  std::cout << cfg.env.name << ' ' << mapprop::algo_name(cfg.algo) << ": mean " << summary.mean << " std "
            << summary.std << " over " << summary.completed << " seeds";
  if (summary.failures > 0) std::cout << ", " << summary.failures << " failed";
  std::cout << '\n';
  for (const auto& r : records)
    if (r.failed) std::cerr << "seed " << r.seed << ": " << r.error << '\n';
  return summary.failures > 0 ? kRunFailure : kOk;
}

int verify(const std::string& check, std::optional<std::uint64_t> seed) {
  if (!seed) seed = seed_from_env();
  const auto reports = mapprop::run_checks(check, seed.value_or(0));
  nlohmann::json out;
  out["seed"] = seed.value_or(0);
  out["checks"] = nlohmann::json::array();
  bool ok = true;
  for (const auto& r : reports) {
    out["checks"].push_back(r.to_json());
    ok = ok && r.passed;
  }
  out["passed"] = ok;
  std::cout << out.dump(2) << '\n';
  return ok ? kOk : kRunFailure;
}

int plot_data(const std::string& dir, int window) {
  if (window < 1) throw mapprop::ConfigError("window must be positive");
  std::cout << mapprop::emit_plot_data(mapprop::read_seed_returns(dir), window);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MAP propagation experiments and checks"};
  app.require_subcommand(1);

  std::string config_path, seeds, out, trajectories;
  auto* train_cmd = app.add_subcommand("train", "Run an experiment from a config file");
  train_cmd->add_option("--config", config_path, "key = value config file")->required();
  train_cmd->add_option("--seeds", seeds, "seed list, e.g. 0..9 or 1,4,7");
  train_cmd->add_option("--out", out, "output directory");
  train_cmd->add_option("--trajectories", trajectories, "episodes whose trajectories are logged, e.g. 1,50,100");

  std::string check = "all";
  std::optional<std::uint64_t> seed;
  auto* verify_cmd = app.add_subcommand("verify", "Run the numeric checks and print a JSON report");
  verify_cmd->add_option("--check", check, "theorem1|theorem2|theorem3|graddecomp|variance|all")
      ->check(CLI::IsMember({"theorem1", "theorem2", "theorem3", "graddecomp", "variance", "all"}));
  verify_cmd->add_option("--seed", seed, "u64 seed");

  std::string in_dir;
  int window = 100;
  auto* plot_cmd = app.add_subcommand("plot-data", "Running-average curves across seeds as CSV");
  plot_cmd->add_option("--in", in_dir, "directory written by train")->required();
  plot_cmd->add_option("--window", window, "running-average window");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train_cmd) return train(config_path, seeds, out, trajectories);
    if (*verify_cmd) return verify(check, seed);
    if (*plot_cmd) return plot_data(in_dir, window);
  } catch (const mapprop::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  }
  return kOk;
}
