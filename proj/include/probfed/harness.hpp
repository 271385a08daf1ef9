#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "probfed/coordinator.hpp"
#include "probfed/distillation.hpp"
#include "probfed/simulation.hpp"

namespace probfed::harness {

enum class ClientKind { kSynthetic, kTrainable };
enum class Profile { kIdentity, kUniform, kMatrix, kExpert };
enum class Partition { kIid, kLabelSkew };
enum class ReferenceSplit { kValidation, kTrain };

struct ClientSpec {
  ClientId id = 0;
  std::string name;
  ClientKind kind = ClientKind::kSynthetic;

  // Synthetic clients: a confusion-row profile.
  Profile profile = Profile::kIdentity;
  std::vector<std::vector<double>> matrix;  // kMatrix rows
  double true_mass = 1.0;                   // kIdentity
  std::vector<ClassIndex> expert_classes;   // kExpert
  double expert_mass = 0.7;
  double fallback_true_mass = 0.3;
  double fallback_confuse_mass = 0.4;
  std::size_t confuse_shift = 1;
  double concentration = std::numeric_limits<double>::infinity();

  // Trainable clients.
  Partition partition = Partition::kIid;
  double skew = 0.0;
  std::vector<std::size_t> features;  // empty = all columns
  std::size_t epochs = 200;
  std::size_t round_epochs = 0;
  double learning_rate = 0.1;
  double l2 = 1e-3;

  std::uint32_t drop_at_round = 0;

  friend bool operator==(const ClientSpec&, const ClientSpec&) = default;
};

struct DataSpec {
  std::size_t classes = 5;
  std::size_t features = 5;
  std::vector<double> proportions;  // empty = balanced
  std::size_t train = 1000;
  std::size_t val = 500;
  std::size_t test = 500;
  double separation = 3.0;

  friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

struct ScenarioConfig {
  std::string name;
  std::uint64_t seed = 0;
  DataSpec data;
  double reference_fraction = 0.2;
  ReferenceSplit reference_split = ReferenceSplit::kValidation;
  coordinator::StrategyChoice strategy;
  distillation::DistillationConfig distill;
  simulation::TransportMode transport = simulation::TransportMode::kInproc;
  simulation::Schedule schedule = simulation::Schedule::kDeterministic;
  std::chrono::milliseconds wait_budget{5000};
  std::chrono::milliseconds grace{200};
  bool compare_fedavg = false;
  std::vector<ClientSpec> clients;
  std::string out;  // output directory; never echoed

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

// Flat "key = value" lines; '#' starts a comment. Each client.id line opens
// a new client block. Throws Errc::kParseError (with line and key) on
// malformed lines and Errc::kValidationError listing every violation.
ScenarioConfig parse_scenario(std::string_view text);
ScenarioConfig load_scenario(const std::filesystem::path& path);

// Canonical text with every default spelled out; parse_scenario(echo(c)) == c
// up to the output directory.
std::string echo(const ScenarioConfig& cfg);

// Seeds derived from the scenario seed.
std::uint64_t data_seed(const ScenarioConfig& cfg);
std::uint64_t ga_seed(const ScenarioConfig& cfg);
std::uint64_t pso_seed(const ScenarioConfig& cfg);
std::uint64_t client_seed(const ScenarioConfig& cfg, ClientId id);

// Confusion rows a synthetic profile expands to.
std::vector<std::vector<double>> profile_rows(const ClientSpec& spec, std::size_t n_classes);

struct Materialized {
  learners::Dataset dataset;
  distillation::ReferenceSet reference;
  std::vector<simulation::Participant> fleet;
};

// Generates the data, the reference set and a fresh fleet.
Materialized materialize(const ScenarioConfig& cfg);

struct RunOutcome {
  std::vector<simulation::RunReport> reports;  // ensemble run first, if any
  std::vector<simulation::ComparisonRow> comparison;
};

// Runs the scenario and returns the reports without writing anything.
RunOutcome execute(const ScenarioConfig& cfg);

// Writes report.csv, trace.csv, bytes.csv, config.echo and, with
// compare_fedavg, comparison.csv / comparison.txt; then cross-checks
// bytes.csv against the message rows of trace.csv.
void write_artifacts(const ScenarioConfig& cfg, const RunOutcome& outcome,
                     const std::filesystem::path& dir);

// Recomputes every bytes.csv cell from trace.csv message rows and the
// wire-format size formula. Returns a description of the first mismatch.
std::optional<std::string> cross_check_bytes(const std::filesystem::path& dir);

RunOutcome run(const ScenarioConfig& cfg, const std::filesystem::path& dir);

struct ReplayResult {
  bool identical = true;
  std::string first_difference;  // "file:line: ..." when not identical
};

// Compares the CSV artifacts of two run directories byte for byte. Throws
// Errc::kMissingArtifact when a required file is absent.
ReplayResult replay_check(const std::filesystem::path& a, const std::filesystem::path& b);

// 17 significant digits, '.' decimal separator.
std::string format_double(double v);

std::string render_comparison_csv(const std::vector<simulation::ComparisonRow>& rows);
std::string render_comparison_text(const std::vector<simulation::ComparisonRow>& rows);

}  // namespace probfed::harness
