// Command-line front end: run a scenario, compare two runs, list the
// shipped scenarios.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "probfed/harness.hpp"

namespace fs = std::filesystem;
using namespace probfed;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;
constexpr int kReplayMismatch = 4;

constexpr const char* kScenarioExtension = ".scenario";

fs::path scenario_dir() {
  if (const char* env = std::getenv("PROBFED_SCENARIO_DIR")) return env;
  return PROBFED_DEFAULT_SCENARIO_DIR;
}

fs::path out_root() {
  if (const char* env = std::getenv("PROBFED_OUT_ROOT")) return env;
  return "runs";
}

// A path, or the name of a shipped scenario.
fs::path resolve_scenario(const std::string& arg) {
  if (fs::exists(arg)) return arg;
  const auto shipped = scenario_dir() / (arg + kScenarioExtension);
  if (fs::exists(shipped)) return shipped;
  return arg;
}

bool is_config_error(Errc code) {
  return code == Errc::kParseError || code == Errc::kValidationError || code == Errc::kInvalidSpec;
}

void print_summary(const harness::RunOutcome& outcome, const fs::path& dir) {
  for (const auto& r : outcome.reports) {
    std::printf("%s/%s\n", r.paradigm.c_str(), r.strategy.c_str());
    for (const auto& rec : r.rounds) {
      std::printf("  round %u  clients %zu  accuracy %.4f  macro-F1 %.4f", rec.round,
                  rec.contributors.size(), rec.ensemble.accuracy, rec.ensemble.macro_f1);
      if (rec.mean_kd) std::printf("  mean KD %.6f", *rec.mean_kd);
      std::printf("  bytes %llu\n",
                  static_cast<unsigned long long>(rec.bytes_probability + rec.bytes_parameters));
      for (const auto& [id, c] : rec.clients) {
        std::printf("    client %u accuracy %.4f\n", id, c.test.accuracy);
      }
    }
    std::printf("  total bytes %llu\n", static_cast<unsigned long long>(r.total_bytes()));
  }
  if (!outcome.comparison.empty()) {
    std::cout << '\n' << harness::render_comparison_text(outcome.comparison);
  }
  std::printf("artifacts in %s\n", dir.string().c_str());
}

int cmd_run(const std::string& scenario, const std::optional<std::string>& out,
            const std::optional<std::string>& mode, const std::optional<std::uint64_t>& seed) {
  harness::ScenarioConfig cfg;
  try {
    cfg = harness::load_scenario(resolve_scenario(scenario));
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  if (mode) {
    cfg.transport = *mode == "tcp" ? simulation::TransportMode::kTcp
                                   : simulation::TransportMode::kInproc;
  }
  if (seed) cfg.seed = *seed;

  fs::path dir;
  if (out) {
    dir = *out;
  } else if (!cfg.out.empty()) {
    dir = fs::path(cfg.out).is_absolute() ? fs::path(cfg.out) : out_root() / cfg.out;
  } else {
    dir = out_root() / cfg.name;
  }

  try {
    const auto outcome = harness::run(cfg, dir);
    print_summary(outcome, dir);
  } catch (const Error& e) {
    std::cerr << "scenario '" << cfg.name << "': " << e.what() << '\n';
    return is_config_error(e.code()) ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "scenario '" << cfg.name << "': " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

int cmd_replay(const std::string& a, const std::string& b) {
  try {
    const auto result = harness::replay_check(a, b);
    if (result.identical) {
      std::cout << "identical\n";
      return kOk;
    }
    std::cout << "differ: " << result.first_difference << '\n';
    return kReplayMismatch;
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return kRuntimeError;
  }
}

int cmd_list() {
  const auto dir = scenario_dir();
  if (!fs::is_directory(dir)) {
    std::cerr << "no scenario directory at " << dir.string() << '\n';
    return kRuntimeError;
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == kScenarioExtension) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      const auto cfg = harness::load_scenario(f);
      const std::size_t rounds = cfg.distill.rounds;
      std::printf("%-24s %zu clients, %zu round%s, strategy %s\n", f.stem().string().c_str(),
                  cfg.clients.size(), rounds, rounds == 1 ? "" : "s",
                  std::string(coordinator::strategy_name(cfg.strategy.kind)).c_str());
    } catch (const Error& e) {
      std::printf("%-24s invalid: %s\n", f.stem().string().c_str(), e.what());
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probability-level federated ensembling simulator"};
  app.require_subcommand(1);

  std::string scenario;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run a scenario file or a shipped scenario by name");
  run->add_option("scenario", scenario, "Scenario file or shipped name")->required();
  run->add_option("--out", out, "Output directory (default: $PROBFED_OUT_ROOT/<name>)");
  run->add_option("--mode", mode, "Transport")->check(CLI::IsMember({"inproc", "tcp"}));
  run->add_option("--seed", seed, "Override the scenario seed");

  std::string dir_a, dir_b;
  auto* replay = app.add_subcommand("replay-check", "Compare the CSV artifacts of two runs");
  replay->add_option("dir_a", dir_a)->required();
  replay->add_option("dir_b", dir_b)->required();

  auto* list = app.add_subcommand("list-scenarios", "List the shipped scenarios");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (*run) return cmd_run(scenario, out, mode, seed);
  if (*replay) return cmd_replay(dir_a, dir_b);
  if (*list) return cmd_list();
  return kConfigError;
}
