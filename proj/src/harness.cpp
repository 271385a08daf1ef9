#include "probfed/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "probfed/fleet.hpp"
#include "probfed/random.hpp"

namespace probfed::harness {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace {

// ---- value parsing ---------------------------------------------------------

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_items(std::string_view s, std::string_view seps) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto next = s.find_first_of(seps, pos);
    const auto item = trim(s.substr(pos, next == std::string_view::npos ? s.npos : next - pos));
    if (!item.empty()) out.push_back(item);
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

struct Line {
  std::size_t number = 0;
  std::string key;
  std::string value;

  [[noreturn]] void fail(const std::string& why) const {
    throw Error(Errc::kParseError,
                "line " + std::to_string(number) + ", key '" + key + "': " + why);
  }

  std::uint64_t u64() const { return parse_u64(value); }
  std::uint64_t parse_u64(std::string_view text) const {
    std::uint64_t v = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
      fail("expected a non-negative integer, got '" + std::string(text) + "'");
    }
    return v;
  }
  double real() const { return parse_real(value); }
  double parse_real(std::string_view text) const {
    double v = 0.0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || std::isnan(v)) {
      fail("expected a number, got '" + std::string(text) + "'");
    }
    return v;
  }
  bool boolean() const {
    if (value == "true") return true;
    if (value == "false") return false;
    fail("expected true or false");
  }
  std::vector<double> reals() const {
    std::vector<double> out;
    for (auto item : split_items(value, " ,")) out.push_back(parse_real(item));
    return out;
  }
  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (auto item : split_items(value, " ,")) out.push_back(parse_u64(item));
    return out;
  }
  template <typename Enum>
  Enum choice(std::initializer_list<std::pair<std::string_view, Enum>> options) const {
    for (const auto& [name, e] : options) {
      if (value == name) return e;
    }
    std::string names;
    for (const auto& [name, e] : options) names += (names.empty() ? "" : "|") + std::string(name);
    fail("expected one of " + names);
  }
};

std::string_view profile_name(Profile p) {
  switch (p) {
    case Profile::kIdentity: return "identity";
    case Profile::kUniform: return "uniform";
    case Profile::kMatrix: return "matrix";
    case Profile::kExpert: return "expert";
  }
  return "?";
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

template <typename T>
std::string join_numbers(const std::vector<T>& values, std::string_view sep = " ") {
  std::vector<std::string> parts;
  for (const auto& v : values) {
    if constexpr (std::is_floating_point_v<T>) {
      parts.push_back(format_double(v));
    } else {
      parts.push_back(std::to_string(v));
    }
  }
  return join(parts, sep);
}

// Keys that only make sense for one kind of client.
const std::set<std::string>& synthetic_keys() {
  static const std::set<std::string> keys{
      "profile", "matrix", "true_mass", "expert_classes", "expert_mass",
      "fallback_true_mass", "fallback_confuse_mass", "confuse_shift", "concentration"};
  return keys;
}
const std::set<std::string>& trainable_keys() {
  static const std::set<std::string> keys{"partition", "skew", "features", "epochs",
                                          "round_epochs", "lr", "l2"};
  return keys;
}

using Setter = std::function<void(ScenarioConfig&, const Line&)>;
using ClientSetter = std::function<void(ClientSpec&, const Line&)>;

const std::map<std::string, Setter>& global_setters() {
  using coordinator::StrategyKind;
  static const std::map<std::string, Setter> setters{
      {"name", [](auto& c, const Line& l) { c.name = l.value; }},
      {"seed", [](auto& c, const Line& l) { c.seed = l.u64(); }},
      {"out", [](auto& c, const Line& l) { c.out = l.value; }},
      {"strategy",
       [](auto& c, const Line& l) {
         try {
           c.strategy.kind = coordinator::parse_strategy(l.value);
         } catch (const Error&) {
           l.fail("unknown strategy '" + l.value + "'");
         }
       }},
      {"transport",
       [](auto& c, const Line& l) {
         c.transport = l.choice<simulation::TransportMode>(
             {{"inproc", simulation::TransportMode::kInproc},
              {"tcp", simulation::TransportMode::kTcp}});
       }},
      {"schedule",
       [](auto& c, const Line& l) {
         c.schedule = l.choice<simulation::Schedule>(
             {{"deterministic", simulation::Schedule::kDeterministic},
              {"live", simulation::Schedule::kLive}});
       }},
      {"wait_budget_ms",
       [](auto& c, const Line& l) { c.wait_budget = std::chrono::milliseconds(l.u64()); }},
      {"grace_ms", [](auto& c, const Line& l) { c.grace = std::chrono::milliseconds(l.u64()); }},
      {"compare_fedavg", [](auto& c, const Line& l) { c.compare_fedavg = l.boolean(); }},
      {"rounds", [](auto& c, const Line& l) { c.distill.rounds = l.u64(); }},
      {"min_contributions", [](auto& c, const Line& l) { c.distill.min_contributions = l.u64(); }},
      {"weights",
       [](auto& c, const Line& l) {
         for (auto item : split_items(l.value, " ,")) {
           const auto colon = item.find(':');
           if (colon == std::string_view::npos) l.fail("expected client:weight pairs");
           const auto id = l.parse_u64(trim(item.substr(0, colon)));
           c.strategy.fixed_weights[static_cast<ClientId>(id)] =
               l.parse_real(trim(item.substr(colon + 1)));
         }
       }},
      {"data.classes", [](auto& c, const Line& l) { c.data.classes = l.u64(); }},
      {"data.features", [](auto& c, const Line& l) { c.data.features = l.u64(); }},
      {"data.proportions", [](auto& c, const Line& l) { c.data.proportions = l.reals(); }},
      {"data.train", [](auto& c, const Line& l) { c.data.train = l.u64(); }},
      {"data.val", [](auto& c, const Line& l) { c.data.val = l.u64(); }},
      {"data.test", [](auto& c, const Line& l) { c.data.test = l.u64(); }},
      {"data.separation", [](auto& c, const Line& l) { c.data.separation = l.real(); }},
      {"reference.fraction", [](auto& c, const Line& l) { c.reference_fraction = l.real(); }},
      {"reference.split",
       [](auto& c, const Line& l) {
         c.reference_split = l.choice<ReferenceSplit>(
             {{"validation", ReferenceSplit::kValidation}, {"train", ReferenceSplit::kTrain}});
       }},
      {"kd.learning_rate", [](auto& c, const Line& l) { c.distill.kd_learning_rate = l.real(); }},
      {"kd.steps", [](auto& c, const Line& l) { c.distill.kd_steps = l.u64(); }},
      {"kd.epsilon", [](auto& c, const Line& l) { c.distill.epsilon = l.real(); }},
      {"kd.ce_mix", [](auto& c, const Line& l) { c.distill.ce_mix = l.real(); }},
      {"kd.convergence_tolerance",
       [](auto& c, const Line& l) { c.distill.convergence_tolerance = l.real(); }},
      {"stacking.l2", [](auto& c, const Line& l) { c.strategy.stacking.l2 = l.real(); }},
      {"stacking.max_iterations",
       [](auto& c, const Line& l) { c.strategy.stacking.max_iterations = l.u64(); }},
      {"stacking.tolerance",
       [](auto& c, const Line& l) { c.strategy.stacking.tolerance = l.real(); }},
      {"stacking.learning_rate",
       [](auto& c, const Line& l) { c.strategy.stacking.learning_rate = l.real(); }},
      {"ga.population", [](auto& c, const Line& l) { c.strategy.ga.population_size = l.u64(); }},
      {"ga.generations", [](auto& c, const Line& l) { c.strategy.ga.generations = l.u64(); }},
      {"ga.elites", [](auto& c, const Line& l) { c.strategy.ga.elite_count = l.u64(); }},
      {"ga.mutation_prob", [](auto& c, const Line& l) { c.strategy.ga.mutation_prob = l.real(); }},
      {"ga.mutation_sigma",
       [](auto& c, const Line& l) { c.strategy.ga.mutation_sigma = l.real(); }},
      {"ga.diversity_period",
       [](auto& c, const Line& l) { c.strategy.ga.diversity_period = l.u64(); }},
      {"ga.diversity_count",
       [](auto& c, const Line& l) { c.strategy.ga.diversity_count = l.u64(); }},
      {"pso.swarm", [](auto& c, const Line& l) { c.strategy.pso.swarm_size = l.u64(); }},
      {"pso.iterations", [](auto& c, const Line& l) { c.strategy.pso.iterations = l.u64(); }},
      {"pso.inertia", [](auto& c, const Line& l) { c.strategy.pso.inertia = l.real(); }},
      {"pso.cognitive", [](auto& c, const Line& l) { c.strategy.pso.cognitive = l.real(); }},
      {"pso.social", [](auto& c, const Line& l) { c.strategy.pso.social = l.real(); }},
  };
  return setters;
}

const std::map<std::string, ClientSetter>& client_setters() {
  static const std::map<std::string, ClientSetter> setters{
      {"name", [](auto& c, const Line& l) { c.name = l.value; }},
      {"kind",
       [](auto& c, const Line& l) {
         c.kind = l.choice<ClientKind>(
             {{"synthetic", ClientKind::kSynthetic}, {"trainable", ClientKind::kTrainable}});
       }},
      {"drop_at_round",
       [](auto& c, const Line& l) { c.drop_at_round = static_cast<std::uint32_t>(l.u64()); }},
      {"profile",
       [](auto& c, const Line& l) {
         c.profile = l.choice<Profile>({{"identity", Profile::kIdentity},
                                        {"uniform", Profile::kUniform},
                                        {"matrix", Profile::kMatrix},
                                        {"expert", Profile::kExpert}});
       }},
      {"matrix",
       [](auto& c, const Line& l) {
         c.matrix.clear();
         for (auto row : split_items(l.value, ";")) {
           std::vector<double> r;
           for (auto item : split_items(row, " ,")) r.push_back(l.parse_real(item));
           c.matrix.push_back(std::move(r));
         }
       }},
      {"true_mass", [](auto& c, const Line& l) { c.true_mass = l.real(); }},
      {"expert_classes",
       [](auto& c, const Line& l) {
         c.expert_classes.clear();
         for (auto i : l.indices()) c.expert_classes.push_back(i);
       }},
      {"expert_mass", [](auto& c, const Line& l) { c.expert_mass = l.real(); }},
      {"fallback_true_mass", [](auto& c, const Line& l) { c.fallback_true_mass = l.real(); }},
      {"fallback_confuse_mass",
       [](auto& c, const Line& l) { c.fallback_confuse_mass = l.real(); }},
      {"confuse_shift", [](auto& c, const Line& l) { c.confuse_shift = l.u64(); }},
      {"concentration", [](auto& c, const Line& l) { c.concentration = l.real(); }},
      {"partition",
       [](auto& c, const Line& l) {
         c.partition = l.choice<Partition>(
             {{"iid", Partition::kIid}, {"label-skew", Partition::kLabelSkew}});
       }},
      {"skew", [](auto& c, const Line& l) { c.skew = l.real(); }},
      {"features", [](auto& c, const Line& l) { c.features = l.indices(); }},
      {"epochs", [](auto& c, const Line& l) { c.epochs = l.u64(); }},
      {"round_epochs", [](auto& c, const Line& l) { c.round_epochs = l.u64(); }},
      {"lr", [](auto& c, const Line& l) { c.learning_rate = l.real(); }},
      {"l2", [](auto& c, const Line& l) { c.l2 = l.real(); }},
  };
  return setters;
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

void validate_client(const ClientSpec& c, const ScenarioConfig& cfg,
                     const std::set<std::string>& keys, std::vector<std::string>& problems) {
  const std::string who = "client " + std::to_string(c.id);
  const auto& foreign = c.kind == ClientKind::kSynthetic ? trainable_keys() : synthetic_keys();
  for (const auto& k : keys) {
    if (foreign.count(k)) {
      problems.push_back(who + ": key 'client." + k + "' does not apply to " +
                         (c.kind == ClientKind::kSynthetic ? "synthetic" : "trainable") +
                         " clients");
    }
  }
  if (c.id == kServerId) problems.push_back(who + ": id is reserved for the server");
  const std::size_t n = cfg.data.classes;

  if (c.kind == ClientKind::kSynthetic) {
    if (!(c.concentration > 0.0)) problems.push_back(who + ": concentration must be positive");
    switch (c.profile) {
      case Profile::kIdentity:
        if (!in_unit(c.true_mass)) problems.push_back(who + ": true_mass outside [0, 1]");
        break;
      case Profile::kUniform:
        break;
      case Profile::kMatrix:
        if (c.matrix.size() != n) {
          problems.push_back(who + ": matrix needs " + std::to_string(n) + " rows");
        }
        for (std::size_t r = 0; r < c.matrix.size(); ++r) {
          if (c.matrix[r].size() != n || !validate_simplex(c.matrix[r])) {
            problems.push_back(who + ": matrix row " + std::to_string(r) +
                               " is not a probability vector over " + std::to_string(n) +
                               " classes");
          }
        }
        break;
      case Profile::kExpert:
        for (auto e : c.expert_classes) {
          if (e >= n) problems.push_back(who + ": expert class " + std::to_string(e) + " >= C");
        }
        if (!in_unit(c.expert_mass)) problems.push_back(who + ": expert_mass outside [0, 1]");
        if (!in_unit(c.fallback_true_mass) || !in_unit(c.fallback_confuse_mass) ||
            c.fallback_true_mass + c.fallback_confuse_mass > 1.0 + 1e-12) {
          problems.push_back(who + ": fallback masses must lie in [0, 1] and sum to at most 1");
        }
        if (n > 0 && c.confuse_shift % n == 0) {
          problems.push_back(who + ": confuse_shift must not be a multiple of C");
        }
        if (n == 2 && c.fallback_true_mass + c.fallback_confuse_mass < 1.0 - 1e-12) {
          problems.push_back(who + ": with two classes the fallback masses must sum to 1");
        }
        break;
    }
  } else {
    std::set<std::size_t> seen;
    for (auto f : c.features) {
      if (f >= cfg.data.features) {
        problems.push_back(who + ": feature " + std::to_string(f) + " >= data.features");
      }
      if (!seen.insert(f).second) problems.push_back(who + ": feature " + std::to_string(f) +
                                                     " listed twice");
    }
    if (!in_unit(c.skew)) problems.push_back(who + ": skew outside [0, 1]");
    if (c.partition == Partition::kIid && c.skew != 0.0) {
      problems.push_back(who + ": skew requires partition = label-skew");
    }
    if (c.epochs == 0) problems.push_back(who + ": epochs must be positive");
    if (!(c.learning_rate > 0.0)) problems.push_back(who + ": lr must be positive");
    if (!(c.l2 >= 0.0)) problems.push_back(who + ": l2 must be non-negative");
  }
}

void validate(const ScenarioConfig& cfg, std::vector<std::string>& problems) {
  using coordinator::StrategyKind;
  if (cfg.name.empty()) problems.push_back("name is required");
  if (cfg.clients.empty()) problems.push_back("at least one client is required");

  const auto& d = cfg.data;
  if (d.classes < 2) problems.push_back("data.classes must be at least 2");
  if (d.features < d.classes) problems.push_back("data.features must be at least data.classes");
  if (!d.proportions.empty() &&
      (d.proportions.size() != d.classes || !validate_simplex(d.proportions))) {
    problems.push_back("data.proportions must be " + std::to_string(d.classes) +
                       " non-negative values summing to 1");
  }
  if (d.train == 0 || d.val == 0 || d.test == 0) {
    problems.push_back("data.train, data.val and data.test must be positive");
  }
  if (!(d.separation >= 0.0) || !std::isfinite(d.separation)) {
    problems.push_back("data.separation must be finite and non-negative");
  }
  if (!(cfg.reference_fraction > 0.0 && cfg.reference_fraction <= 1.0)) {
    problems.push_back("reference.fraction must lie in (0, 1]");
  }

  try {
    distillation::validate(cfg.distill);
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
  if (cfg.distill.min_contributions > cfg.clients.size() && !cfg.clients.empty()) {
    problems.push_back("min_contributions exceeds the number of clients");
  }

  const auto kind = cfg.strategy.kind;
  try {
    if (kind == StrategyKind::kGa) optimizers::validate(cfg.strategy.ga);
    if (kind == StrategyKind::kPso) optimizers::validate(cfg.strategy.pso);
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
  if (kind == StrategyKind::kStacking &&
      (cfg.strategy.stacking.max_iterations == 0 || !(cfg.strategy.stacking.learning_rate > 0.0) ||
       !(cfg.strategy.stacking.l2 >= 0.0))) {
    problems.push_back("stacking settings must be positive");
  }
  if (kind == StrategyKind::kWeighted) {
    if (cfg.strategy.fixed_weights.empty()) problems.push_back("weighted strategy needs weights");
  } else if (!cfg.strategy.fixed_weights.empty()) {
    problems.push_back("weights only apply to the weighted strategy");
  }
  std::set<ClientId> ids;
  for (const auto& c : cfg.clients) ids.insert(c.id);
  for (const auto& [id, w] : cfg.strategy.fixed_weights) {
    if (!ids.count(id)) problems.push_back("weight for unknown client " + std::to_string(id));
    if (!(w >= 0.0) || !std::isfinite(w)) {
      problems.push_back("weight for client " + std::to_string(id) + " must be non-negative");
    }
  }

  if (kind == StrategyKind::kFedavgBaseline || cfg.compare_fedavg) {
    const ClientSpec* first = nullptr;
    for (const auto& c : cfg.clients) {
      if (c.kind != ClientKind::kTrainable) {
        problems.push_back("parameter averaging needs trainable clients; client " +
                           std::to_string(c.id) + " is synthetic");
        continue;
      }
      if (first == nullptr) {
        first = &c;
      } else if (c.features != first->features) {
        problems.push_back("parameter averaging needs identical feature columns");
      }
    }
  }
}

}  // namespace

ScenarioConfig parse_scenario(std::string_view text) {
  ScenarioConfig cfg;
  std::vector<std::string> problems;
  std::set<std::string> seen_global;
  std::vector<std::set<std::string>> seen_client;
  bool has_seed = false;

  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view raw = text.substr(pos, end == text.npos ? text.npos : end - pos);
    pos = end == text.npos ? text.size() + 1 : end + 1;
    ++number;
    if (const auto hash = raw.find('#'); hash != raw.npos) raw = raw.substr(0, hash);
    raw = trim(raw);
    if (raw.empty()) continue;

    const auto sep = raw.find_first_of("=:");
    Line line{number, std::string(trim(raw.substr(0, sep == raw.npos ? raw.size() : sep))), {}};
    if (sep == raw.npos) line.fail("expected 'key = value'");
    line.value = std::string(trim(raw.substr(sep + 1)));
    if (line.key.empty()) line.fail("empty key");
    if (line.value.empty()) line.fail("empty value");

    if (line.key.rfind("client.", 0) == 0) {
      const std::string sub = line.key.substr(7);
      if (sub == "id") {
        ClientSpec c;
        c.id = static_cast<ClientId>(line.u64());
        if (line.u64() > 0xFFFFFFFFULL) line.fail("client id does not fit 32 bits");
        cfg.clients.push_back(std::move(c));
        seen_client.emplace_back();
        continue;
      }
      if (cfg.clients.empty()) line.fail("client key before the first client.id");
      auto it = client_setters().find(sub);
      if (it == client_setters().end()) {
        problems.push_back("unknown key '" + line.key + "' (line " + std::to_string(number) + ")");
        continue;
      }
      if (!seen_client.back().insert(sub).second) {
        problems.push_back("duplicate key '" + line.key + "' for client " +
                           std::to_string(cfg.clients.back().id));
      }
      it->second(cfg.clients.back(), line);
      continue;
    }

    auto it = global_setters().find(line.key);
    if (it == global_setters().end()) {
      problems.push_back("unknown key '" + line.key + "' (line " + std::to_string(number) + ")");
      continue;
    }
    if (!seen_global.insert(line.key).second) {
      problems.push_back("duplicate key '" + line.key + "'");
    }
    if (line.key == "seed") has_seed = true;
    it->second(cfg, line);
  }

  if (!has_seed) problems.push_back("seed is required");
  std::set<ClientId> ids;
  for (std::size_t i = 0; i < cfg.clients.size(); ++i) {
    auto& c = cfg.clients[i];
    if (!ids.insert(c.id).second) {
      problems.push_back("client id " + std::to_string(c.id) + " appears twice");
    }
    if (c.name.empty()) c.name = "client-" + std::to_string(c.id);
    validate_client(c, cfg, seen_client[i], problems);
  }
  validate(cfg, problems);
  if (!problems.empty()) throw Error(Errc::kValidationError, join(problems, "; "));
  return cfg;
}

ScenarioConfig load_scenario(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIo, "cannot read scenario " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_scenario(text);
  } catch (const Error& e) {
    // Keep the code, add the file name.
    const std::string what = e.what();
    const auto colon = what.find(": ");
    throw Error(e.code(), path.string() + ": " +
                              (colon == what.npos ? what : what.substr(colon + 2)));
  }
}

std::string echo(const ScenarioConfig& cfg) {
  using simulation::Schedule;
  using simulation::TransportMode;
  std::ostringstream o;
  auto kv = [&](std::string_view k, const std::string& v) { o << k << " = " << v << '\n'; };
  auto num = [&](std::string_view k, double v) { kv(k, format_double(v)); };
  auto count = [&](std::string_view k, std::uint64_t v) { kv(k, std::to_string(v)); };

  kv("name", cfg.name);
  count("seed", cfg.seed);
  kv("strategy", std::string(coordinator::strategy_name(cfg.strategy.kind)));
  kv("transport", cfg.transport == TransportMode::kTcp ? "tcp" : "inproc");
  kv("schedule", cfg.schedule == Schedule::kLive ? "live" : "deterministic");
  count("wait_budget_ms", static_cast<std::uint64_t>(cfg.wait_budget.count()));
  count("grace_ms", static_cast<std::uint64_t>(cfg.grace.count()));
  kv("compare_fedavg", cfg.compare_fedavg ? "true" : "false");
  count("rounds", cfg.distill.rounds);
  count("min_contributions", cfg.distill.min_contributions);
  if (!cfg.strategy.fixed_weights.empty()) {
    std::vector<std::string> parts;
    for (const auto& [id, w] : cfg.strategy.fixed_weights) {
      parts.push_back(std::to_string(id) + ":" + format_double(w));
    }
    kv("weights", join(parts, " "));
  }

  count("data.classes", cfg.data.classes);
  count("data.features", cfg.data.features);
  if (!cfg.data.proportions.empty()) kv("data.proportions", join_numbers(cfg.data.proportions));
  count("data.train", cfg.data.train);
  count("data.val", cfg.data.val);
  count("data.test", cfg.data.test);
  num("data.separation", cfg.data.separation);
  num("reference.fraction", cfg.reference_fraction);
  kv("reference.split", cfg.reference_split == ReferenceSplit::kTrain ? "train" : "validation");

  num("kd.learning_rate", cfg.distill.kd_learning_rate);
  count("kd.steps", cfg.distill.kd_steps);
  num("kd.epsilon", cfg.distill.epsilon);
  num("kd.ce_mix", cfg.distill.ce_mix);
  num("kd.convergence_tolerance", cfg.distill.convergence_tolerance);

  const auto& s = cfg.strategy;
  num("stacking.l2", s.stacking.l2);
  count("stacking.max_iterations", s.stacking.max_iterations);
  num("stacking.tolerance", s.stacking.tolerance);
  num("stacking.learning_rate", s.stacking.learning_rate);
  count("ga.population", s.ga.population_size);
  count("ga.generations", s.ga.generations);
  count("ga.elites", s.ga.elite_count);
  num("ga.mutation_prob", s.ga.mutation_prob);
  num("ga.mutation_sigma", s.ga.mutation_sigma);
  count("ga.diversity_period", s.ga.diversity_period);
  count("ga.diversity_count", s.ga.diversity_count);
  count("pso.swarm", s.pso.swarm_size);
  count("pso.iterations", s.pso.iterations);
  num("pso.inertia", s.pso.inertia);
  num("pso.cognitive", s.pso.cognitive);
  num("pso.social", s.pso.social);

  for (const auto& c : cfg.clients) {
    o << '\n';
    count("client.id", c.id);
    kv("client.name", c.name);
    kv("client.kind", c.kind == ClientKind::kTrainable ? "trainable" : "synthetic");
    count("client.drop_at_round", c.drop_at_round);
    if (c.kind == ClientKind::kSynthetic) {
      kv("client.profile", std::string(profile_name(c.profile)));
      if (!c.matrix.empty()) {
        std::vector<std::string> rows;
        for (const auto& r : c.matrix) rows.push_back(join_numbers(r));
        kv("client.matrix", join(rows, "; "));
      }
      num("client.true_mass", c.true_mass);
      if (!c.expert_classes.empty()) kv("client.expert_classes", join_numbers(c.expert_classes));
      num("client.expert_mass", c.expert_mass);
      num("client.fallback_true_mass", c.fallback_true_mass);
      num("client.fallback_confuse_mass", c.fallback_confuse_mass);
      count("client.confuse_shift", c.confuse_shift);
      num("client.concentration", c.concentration);
    } else {
      kv("client.partition", c.partition == Partition::kLabelSkew ? "label-skew" : "iid");
      num("client.skew", c.skew);
      if (!c.features.empty()) kv("client.features", join_numbers(c.features));
      count("client.epochs", c.epochs);
      count("client.round_epochs", c.round_epochs);
      num("client.lr", c.learning_rate);
      num("client.l2", c.l2);
    }
  }
  return o.str();
}

std::uint64_t data_seed(const ScenarioConfig& cfg) { return mix_seed(cfg.seed, 0x64617461); }
std::uint64_t ga_seed(const ScenarioConfig& cfg) { return mix_seed(cfg.seed, 0x6761); }
std::uint64_t pso_seed(const ScenarioConfig& cfg) { return mix_seed(cfg.seed, 0x70736f); }
std::uint64_t client_seed(const ScenarioConfig& cfg, ClientId id) {
  return mix_seed(cfg.seed, 0x636c69656e7400ULL ^ id);
}

std::vector<std::vector<double>> profile_rows(const ClientSpec& spec, std::size_t n) {
  std::vector<std::vector<double>> rows(n, std::vector<double>(n, 0.0));
  const double others = static_cast<double>(n - 1);
  switch (spec.profile) {
    case Profile::kMatrix:
      return spec.matrix;
    case Profile::kUniform:
      for (auto& r : rows) std::fill(r.begin(), r.end(), 1.0 / static_cast<double>(n));
      return rows;
    case Profile::kIdentity:
      for (std::size_t c = 0; c < n; ++c) {
        std::fill(rows[c].begin(), rows[c].end(), (1.0 - spec.true_mass) / others);
        rows[c][c] = spec.true_mass;
      }
      return rows;
    case Profile::kExpert:
      for (std::size_t c = 0; c < n; ++c) {
        auto& r = rows[c];
        const bool expert = std::find(spec.expert_classes.begin(), spec.expert_classes.end(),
                                      c) != spec.expert_classes.end();
        if (expert) {
          std::fill(r.begin(), r.end(), (1.0 - spec.expert_mass) / others);
          r[c] = spec.expert_mass;
          continue;
        }
        const std::size_t confuser = (c + spec.confuse_shift) % n;
        const double rest = n > 2 ? (1.0 - spec.fallback_true_mass - spec.fallback_confuse_mass) /
                                        static_cast<double>(n - 2)
                                  : 0.0;
        std::fill(r.begin(), r.end(), rest);
        r[c] = spec.fallback_true_mass;
        r[confuser] = spec.fallback_confuse_mass;
      }
      return rows;
  }
  return rows;
}

Materialized materialize(const ScenarioConfig& cfg) {
  Materialized out;
  learners::DatasetSpec spec;
  spec.n_classes = cfg.data.classes;
  spec.feature_dim = cfg.data.features;
  spec.class_proportions = cfg.data.proportions.empty()
                               ? WeightVector::uniform(cfg.data.classes)
                               : WeightVector(cfg.data.proportions);
  spec.n_train = cfg.data.train;
  spec.n_val = cfg.data.val;
  spec.n_test = cfg.data.test;
  spec.cluster_separation = cfg.data.separation;
  spec.rng_seed = data_seed(cfg);
  out.dataset = learners::generate_dataset(spec);

  const auto& split = cfg.reference_split == ReferenceSplit::kTrain ? out.dataset.train
                                                                    : out.dataset.val;
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.reference_fraction *
                                            static_cast<double>(split.size()))),
      1, split.size());
  out.reference = distillation::make_reference_set({split.begin(), split.begin() + k});
  std::vector<LabeledSample> pool;
  if (cfg.reference_split == ReferenceSplit::kTrain) {
    pool.assign(out.dataset.train.begin() + k, out.dataset.train.end());
  } else {
    pool = out.dataset.train;
  }

  // Each training sample goes to exactly one trainable client, with weight
  // 1 − s + s·K on the client whose home classes include its label.
  std::vector<const ClientSpec*> trainable;
  for (const auto& c : cfg.clients) {
    if (c.kind == ClientKind::kTrainable) trainable.push_back(&c);
  }
  std::vector<std::vector<LabeledSample>> local(trainable.size());
  if (!trainable.empty()) {
    const double kk = static_cast<double>(trainable.size());
    Rng rng(mix_seed(cfg.seed, 0x70617274));  // "part"
    for (const auto& s : pool) {
      std::vector<double> w;
      for (std::size_t i = 0; i < trainable.size(); ++i) {
        const auto& c = *trainable[i];
        const double skew = c.partition == Partition::kLabelSkew ? c.skew : 0.0;
        const bool home = s.label % trainable.size() == i;
        w.push_back(1.0 - skew + skew * kk * (home ? 1.0 : 0.0));
      }
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      local[pick(rng)].push_back(s);
    }
  }

  std::size_t t = 0;
  for (const auto& c : cfg.clients) {
    simulation::Participant p;
    p.drop_at_round = c.drop_at_round;
    if (c.kind == ClientKind::kSynthetic) {
      learners::SyntheticClassifier model;
      for (auto& r : profile_rows(c, cfg.data.classes)) {
        model.confusion_rows.emplace_back(std::move(r));
      }
      model.concentration = c.concentration;
      model.rng_seed = client_seed(cfg, c.id);
      p.client = std::make_unique<fleet::SyntheticClient>(c.id, c.name, std::move(model));
    } else {
      std::vector<std::size_t> features = c.features;
      if (features.empty()) {
        for (std::size_t j = 0; j < cfg.data.features; ++j) features.push_back(j);
      }
      fleet::TrainingConfig training{c.epochs, c.round_epochs, c.learning_rate, c.l2};
      p.client = std::make_unique<fleet::TrainableClient>(
          c.id, c.name, cfg.data.classes, std::move(features), std::move(local[t++]), training);
    }
    out.fleet.push_back(std::move(p));
  }
  return out;
}

RunOutcome execute(const ScenarioConfig& cfg) {
  auto strategy = cfg.strategy;
  strategy.ga.rng_seed = ga_seed(cfg);
  strategy.pso.rng_seed = pso_seed(cfg);

  simulation::RunConfig run_cfg;
  run_cfg.distill = cfg.distill;
  run_cfg.transport = cfg.transport;
  run_cfg.schedule = cfg.schedule;
  run_cfg.wait_budget = cfg.wait_budget;
  run_cfg.grace = cfg.grace;
  run_cfg.rng_seed = cfg.seed;
  run_cfg.scenario = cfg.name;

  RunOutcome out;
  if (strategy.kind == coordinator::StrategyKind::kFedavgBaseline) {
    auto m = materialize(cfg);
    out.reports.push_back(simulation::run_fedavg_baseline(
        m.fleet, static_cast<std::uint32_t>(cfg.distill.rounds), m.dataset.test, run_cfg));
    return out;
  }
  {
    auto m = materialize(cfg);
    out.reports.push_back(
        simulation::run_feedback_loop(m.fleet, strategy, m.reference, m.dataset.test, run_cfg));
  }
  if (cfg.compare_fedavg) {
    // A fresh fleet, so both paradigms start from the same untrained clients.
    auto m = materialize(cfg);
    const auto rounds = static_cast<std::uint32_t>(out.reports.front().rounds.size());
    out.reports.push_back(
        simulation::run_fedavg_baseline(m.fleet, rounds, m.dataset.test, run_cfg));
    out.comparison = simulation::compare_paradigms(out.reports[0], out.reports[1]);
  }
  return out;
}

namespace {

std::string subject_of(ClientId id) {
  return id == kServerId ? "server" : std::to_string(id);
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string render_report(const std::vector<simulation::RunReport>& reports) {
  std::ostringstream o;
  std::vector<ClientId> roster;
  if (!reports.empty()) roster = reports.front().roster;
  o << "run,round,strategy,contributors,stale,replaced,dropped_samples,ensemble_accuracy,"
       "ensemble_macro_f1,reference_accuracy,reference_macro_f1,mean_kd_before,mean_kd,"
       "bytes_probability,bytes_parameters,messages";
  for (ClientId id : roster) o << ",client_" << id << "_accuracy,client_" << id << "_kd";
  o << '\n';
  for (const auto& r : reports) {
    for (const auto& rec : r.rounds) {
      o << r.paradigm << ',' << rec.round << ',' << rec.strategy << ','
        << join_numbers(rec.contributors, ";") << ',' << rec.stale << ',' << rec.replaced << ','
        << rec.dropped_samples << ',' << format_double(rec.ensemble.accuracy) << ','
        << format_double(rec.ensemble.macro_f1) << ','
        << opt(rec.reference ? std::optional(rec.reference->accuracy) : std::nullopt) << ','
        << opt(rec.reference ? std::optional(rec.reference->macro_f1) : std::nullopt) << ','
        << opt(rec.mean_kd_before) << ',' << opt(rec.mean_kd) << ',' << rec.bytes_probability
        << ',' << rec.bytes_parameters << ',' << rec.messages;
      for (ClientId id : roster) {
        auto it = rec.clients.find(id);
        if (it == rec.clients.end()) {
          o << ",,";
        } else {
          o << ',' << format_double(it->second.test.accuracy) << ','
            << opt(it->second.kd_after);
        }
      }
      o << '\n';
    }
  }
  return o.str();
}

std::string render_trace(const std::vector<simulation::RunReport>& reports) {
  std::ostringstream o;
  o << "run,record,round,step,subject,key,a,b\n";
  for (const auto& r : reports) {
    for (const auto& t : r.trace) {
      o << r.paradigm << ',' << t.record << ',' << t.round << ',' << t.step << ',' << t.subject
        << ',' << t.key << ',' << format_double(t.a) << ',' << opt(t.b) << '\n';
    }
    for (const auto& m : r.messages) {
      o << r.paradigm << ",msg," << m.round << ',' << m.sequence << ',' << subject_of(m.publisher)
        << ',' << transport::kind_name(m.kind) << ',' << m.items << ',' << m.n_classes << '\n';
    }
  }
  return o.str();
}

struct ByteCell {
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  bool operator==(const ByteCell&) const = default;
};
// (run, round, client, direction, kind)
using ByteKey = std::tuple<std::string, std::uint32_t, std::string, std::string, std::string>;

std::map<ByteKey, ByteCell> byte_cells(const simulation::RunReport& r) {
  std::map<ByteKey, ByteCell> cells;
  for (const auto& m : r.messages) {
    const auto dir = m.publisher == kServerId ? transport::Direction::kDown
                                              : transport::Direction::kUp;
    auto& cell = cells[{r.paradigm, m.round, subject_of(m.publisher),
                        std::string(transport::direction_name(dir)),
                        std::string(transport::kind_name(m.kind))}];
    ++cell.messages;
    cell.bytes += m.bytes;
  }
  return cells;
}

std::string render_bytes(const std::vector<simulation::RunReport>& reports) {
  std::ostringstream o;
  o << "run,round,client,direction,kind,messages,bytes\n";
  for (const auto& r : reports) {
    std::uint64_t total = 0;
    for (const auto& [k, cell] : byte_cells(r)) {
      o << std::get<0>(k) << ',' << std::get<1>(k) << ',' << std::get<2>(k) << ','
        << std::get<3>(k) << ',' << std::get<4>(k) << ',' << cell.messages << ',' << cell.bytes
        << '\n';
      total += cell.bytes;
    }
    if (total != r.ledger.total()) {
      throw Error(Errc::kIo, "bytes.csv total " + std::to_string(total) +
                                 " differs from the ledger total " +
                                 std::to_string(r.ledger.total()));
    }
  }
  return o.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIo, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(Errc::kIo, "short write to " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kMissingArtifact, "missing " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(path));
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma == line.npos ? line.npos : comma - pos));
      if (comma == line.npos) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(Errc::kMalformed, "not an integer: '" + s + "'");
  }
  return v;
}

}  // namespace

std::string render_comparison_csv(const std::vector<simulation::ComparisonRow>& rows) {
  std::ostringstream o;
  o << "label,accuracy,macro_f1,total_bytes,upload_bytes,byte_ratio\n";
  for (const auto& r : rows) {
    o << r.label << ',' << format_double(r.accuracy) << ',' << format_double(r.macro_f1) << ','
      << r.total_bytes << ',' << r.upload_bytes << ',' << format_double(r.byte_ratio) << '\n';
  }
  return o.str();
}

std::string render_comparison_text(const std::vector<simulation::ComparisonRow>& rows) {
  const std::vector<std::string> header{"paradigm", "accuracy", "macro-F1", "total bytes",
                                        "upload bytes", "byte ratio"};
  std::vector<std::vector<std::string>> cells{header};
  auto fixed = [](double v, int digits) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
  };
  for (const auto& r : rows) {
    cells.push_back({r.label, fixed(r.accuracy, 4), fixed(r.macro_f1, 4),
                     std::to_string(r.total_bytes), std::to_string(r.upload_bytes),
                     fixed(r.byte_ratio, 6)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream o;
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i == 0) {
        o << row[i] << std::string(width[i] - row[i].size(), ' ');
      } else {
        o << "  " << std::string(width[i] - row[i].size(), ' ') << row[i];
      }
    }
    o << '\n';
  }
  return o.str();
}

std::optional<std::string> cross_check_bytes(const fs::path& dir) {
  std::map<ByteKey, ByteCell> expected;
  for (const auto& row : read_csv(dir / "trace.csv")) {
    if (row.size() != 8) return "trace.csv row with " + std::to_string(row.size()) + " cells";
    if (row[1] != "msg") continue;
    const auto kind = row[5];
    const auto items = to_u64(row[6]);
    const auto classes = to_u64(row[7]);
    std::uint64_t size = 0;
    if (kind == transport::kind_name(transport::MessageKind::kParameters)) {
      size = transport::parameter_message_size(items);
    } else {
      size = transport::probability_message_size(items, classes);
    }
    const auto dir_name = row[4] == "server" ? transport::Direction::kDown
                                             : transport::Direction::kUp;
    auto& cell = expected[{row[0], static_cast<std::uint32_t>(to_u64(row[2])), row[4],
                           std::string(transport::direction_name(dir_name)), kind}];
    ++cell.messages;
    cell.bytes += size;
  }
  std::map<ByteKey, ByteCell> actual;
  for (const auto& row : read_csv(dir / "bytes.csv")) {
    if (row.size() != 7) return "bytes.csv row with " + std::to_string(row.size()) + " cells";
    actual[{row[0], static_cast<std::uint32_t>(to_u64(row[1])), row[2], row[3], row[4]}] =
        ByteCell{to_u64(row[5]), to_u64(row[6])};
  }
  for (const auto& [k, cell] : expected) {
    auto it = actual.find(k);
    const std::string where = std::get<0>(k) + " round " + std::to_string(std::get<1>(k)) +
                              " client " + std::get<2>(k) + " " + std::get<4>(k);
    if (it == actual.end()) return "bytes.csv lacks " + where;
    if (!(it->second == cell)) {
      return "bytes.csv " + where + ": " + std::to_string(it->second.bytes) + " bytes in " +
             std::to_string(it->second.messages) + " messages, trace implies " +
             std::to_string(cell.bytes) + " in " + std::to_string(cell.messages);
    }
  }
  if (actual.size() != expected.size()) return "bytes.csv has rows without message records";
  return std::nullopt;
}

void write_artifacts(const ScenarioConfig& cfg, const RunOutcome& outcome, const fs::path& dir) {
  fs::create_directories(dir);
  write_file(dir / "report.csv", render_report(outcome.reports));
  write_file(dir / "trace.csv", render_trace(outcome.reports));
  write_file(dir / "bytes.csv", render_bytes(outcome.reports));
  write_file(dir / "config.echo", echo(cfg));
  const auto csv = dir / "comparison.csv";
  const auto txt = dir / "comparison.txt";
  if (!outcome.comparison.empty()) {
    write_file(csv, render_comparison_csv(outcome.comparison));
    write_file(txt, render_comparison_text(outcome.comparison));
  } else {
    fs::remove(csv);
    fs::remove(txt);
  }
  if (auto problem = cross_check_bytes(dir)) {
    throw Error(Errc::kIo, "byte cross-check failed: " + *problem);
  }
}

RunOutcome run(const ScenarioConfig& cfg, const fs::path& dir) {
  auto outcome = execute(cfg);
  write_artifacts(cfg, outcome, dir);
  return outcome;
}

ReplayResult replay_check(const fs::path& a, const fs::path& b) {
  ReplayResult result;
  auto differ = [&](std::string why) {
    if (result.identical) {
      result.identical = false;
      result.first_difference = std::move(why);
    }
  };
  auto compare = [&](const std::string& name) {
    const auto ta = read_file(a / name);
    const auto tb = read_file(b / name);
    if (ta == tb) return;
    std::istringstream sa(ta), sb(tb);
    std::string la, lb;
    for (std::size_t line = 1;; ++line) {
      const bool ga = static_cast<bool>(std::getline(sa, la));
      const bool gb = static_cast<bool>(std::getline(sb, lb));
      if (!ga && !gb) {
        differ(name + ": trailing bytes differ");
        return;
      }
      if (ga != gb || la != lb) {
        differ(name + ":" + std::to_string(line) + ": '" + (ga ? la : "<eof>") + "' vs '" +
               (gb ? lb : "<eof>") + "'");
        return;
      }
    }
  };
  for (const char* name : {"report.csv", "trace.csv", "bytes.csv"}) compare(name);
  const bool ca = fs::exists(a / "comparison.csv");
  const bool cb = fs::exists(b / "comparison.csv");
  if (ca && cb) {
    compare("comparison.csv");
  } else if (ca != cb) {
    differ(std::string("comparison.csv present only in ") + (ca ? a : b).string());
  }
  return result;
}

}  // namespace probfed::harness
