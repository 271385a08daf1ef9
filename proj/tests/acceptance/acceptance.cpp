// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "probfed/aggregation.hpp"
#include "probfed/distillation.hpp"
#include "probfed/harness.hpp"
#include "probfed/optimizers.hpp"
#include "probfed/transport.hpp"
#include "test_support.hpp"

using namespace probfed;
using namespace probfed::testing;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = PROBFED_SCENARIO_DIR;

// Tolerances and limits, in one place.
constexpr double kSimplexTol = 1e-6;
constexpr double kEnsembleGap = 0.03;
constexpr double kPerfectWeight = 0.9;
constexpr double kGridSlack = 0.02;
constexpr int kGridSteps = 20;  // 0.05 resolution
constexpr double kStackingAccuracy = 1.0;
constexpr double kStackingSlack = 0.01;
constexpr double kBestIndividualCap = 0.6;
constexpr std::size_t kStackingIterationCap = 1000;
constexpr double kKdDrop = 0.5;
constexpr double kGradientRelTol = 1e-4;
constexpr double kUploadRatioCap = 1.0 / 100.0;
constexpr double kReplaySlowdownCap = 2.0;
constexpr double kMetricTol = 1e-12;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

// Collects failed expectations; the first few are kept for the report.
class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_.push_back(what);
  }
  void note(const std::string& what) { notes_.push_back(what); }
  Verdict verdict() const {
    std::string joined;
    for (const auto& n : notes_) joined += (joined.empty() ? "" : "; ") + n;
    if (failures_ > 3) joined += "; " + std::to_string(failures_ - 3) + " more failures";
    return {failures_ == 0, joined};
  }

 private:
  std::size_t failures_ = 0;
  std::vector<std::string> notes_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream out;
  out.precision(precision);
  out << v;
  return out.str();
}

harness::ScenarioConfig shipped(const std::string& name) {
  return harness::load_scenario(kScenarios / (name + ".scenario"));
}

ClassIndex oracle_argmax(const std::vector<double>& v) {
  ClassIndex best = 0;
  for (std::size_t c = 1; c < v.size(); ++c) {
    if (v[c] > v[best]) best = c;
  }
  return best;
}

// 1. Randomized operations across fusion, optimizers and distillation.
Verdict simplex_suite() {
  constexpr int kOperations = 10000;
  Rng rng(71);
  Checker check;
  std::uniform_int_distribution<std::size_t> models(1, 4), classes(2, 8), samples(1, 4);
  std::uniform_int_distribution<int> coin(0, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t emitted = 0;
  auto verify = [&](std::span<const double> v, const char* op) {
    ++emitted;
    check.expect(validate_simplex(v, kSimplexTol), std::string(op) + " left the simplex");
  };
  // Dense, sparse and one-hot inputs.
  auto input = [&](std::size_t c) {
    switch (coin(rng)) {
      case 0:
        return ProbabilityVector::one_hot(
            c, std::uniform_int_distribution<std::size_t>(0, c - 1)(rng));
      case 1: {
        auto v = sample_flat_dirichlet(rng, c);
        v[0] = 0.0;
        return ProbabilityVector::from_scores(v);
      }
      default: return random_simplex(rng, c);
    }
  };
  auto random_aligned = [&](std::size_t m, std::size_t c, std::size_t n) {
    std::vector<transport::ContributionMessage> msgs;
    for (ClientId k = 1; k <= m; ++k) {
      transport::ContributionMessage msg{k, 1, static_cast<std::uint16_t>(c), {}};
      for (std::size_t i = 0; i < n; ++i) msg.entries.push_back({i + 1, input(c)});
      msgs.push_back(std::move(msg));
    }
    auto a = aggregation::align(msgs);
    for (std::size_t i = 0; i < n; ++i) a.labels.push_back(i % c);
    return a;
  };
  auto random_weights = [&](std::size_t m) {
    if (coin(rng) == 0) return WeightVector::one_hot(m, m - 1);
    return WeightVector(sample_flat_dirichlet(rng, m));
  };

  for (int op = 0; op < kOperations; ++op) {
    try {
      switch (op % 6) {
        case 0: {
          const auto a = random_aligned(models(rng), classes(rng), samples(rng));
          for (const auto& p : aggregation::mean_fuse(a)) verify(p.values(), "mean_fuse");
          break;
        }
        case 1: {
          const auto a = random_aligned(models(rng), classes(rng), samples(rng));
          for (const auto& p : aggregation::weighted_fuse(a, random_weights(a.n_models()))) {
            verify(p.values(), "weighted_fuse");
          }
          break;
        }
        case 2: {
          const auto a = random_aligned(models(rng) + 1, classes(rng), 8);
          aggregation::StackingConfig cfg;
          cfg.max_iterations = 50;
          const auto fit = aggregation::train_stacking(a, cfg);
          for (const auto& p : aggregation::predict_stacking(fit.model, a)) {
            verify(p.values(), "predict_stacking");
          }
          break;
        }
        case 3: {
          const std::size_t m = models(rng) + 1;
          const double scale = std::pow(10.0, 6 * coin(rng) - 6);
          std::vector<double> raw(m);
          for (double& v : raw) v = scale * normal(rng);
          verify(optimizers::repair_to_simplex(raw).values(), "repair_to_simplex");
          const auto a = random_weights(m), b = random_weights(m);
          const auto cut = std::uniform_int_distribution<std::size_t>(1, m - 1)(rng);
          const auto child = optimizers::ga_crossover(a, b, cut);
          verify(child.values(), "ga_crossover");
          const optimizers::PsoConfig pso;
          std::vector<double> velocity(m);
          for (double& v : velocity) v = normal(rng);
          const auto next = optimizers::pso_velocity(velocity, child.values(), a.values(),
                                                     b.values(), pso, unit(rng), unit(rng));
          std::vector<double> moved(m);
          for (std::size_t i = 0; i < m; ++i) moved[i] = child[i] + next[i];
          verify(optimizers::repair_to_simplex(moved).values(), "pso step");
          break;
        }
        case 4: {
          auto inst = random_kd_instance(rng);
          distillation::DistillationConfig cfg;
          cfg.kd_steps = 3;
          cfg.kd_learning_rate = std::pow(10.0, coin(rng) - 1.0);
          const auto r =
              distillation::client_distill_update(inst.model, inst.ref, inst.entries, cfg);
          for (const auto& s : inst.ref.samples) {
            verify(learners::softmax(r.model.logits(s.features)), "distilled model");
          }
          std::vector<double> logits(classes(rng));
          for (double& v : logits) v = 700.0 * normal(rng);
          verify(learners::softmax(logits), "softmax");
          break;
        }
        case 5: {
          const auto a = random_aligned(models(rng) + 1, classes(rng), 10);
          const optimizers::FitnessContext ctx(a);
          if (op % 12 == 5) {
            optimizers::GaConfig cfg;
            cfg.population_size = 8;
            cfg.elite_count = 2;
            cfg.diversity_count = 2;
            cfg.generations = 5;
            cfg.rng_seed = static_cast<std::uint64_t>(op);
            verify(optimizers::ga_optimize(ctx, cfg).weights.values(), "ga_optimize");
          } else {
            optimizers::PsoConfig cfg;
            cfg.swarm_size = 6;
            cfg.iterations = 5;
            cfg.rng_seed = static_cast<std::uint64_t>(op);
            verify(optimizers::pso_optimize(ctx, cfg).weights.values(), "pso_optimize");
          }
          break;
        }
      }
    } catch (const Error& e) {
      check.expect(e.code() != Errc::kSimplexViolation, std::string("operation threw ") + e.what());
      if (e.code() != Errc::kSimplexViolation) throw;
    }
  }
  check.note(std::to_string(kOperations) + " operations, " + std::to_string(emitted) +
             " vectors checked");
  return check.verdict();
}

// 2. Mean fusion against a hand-coded average of the members' test outputs.
Verdict ensemble_beats_best() {
  Checker check;
  const auto cfg = shipped("complementary-experts");
  const auto outcome = harness::execute(cfg);
  const auto& rec = outcome.reports.at(0).rounds.at(0);
  auto m = harness::materialize(cfg);
  const auto& test = m.dataset.test;
  check.expect(cfg.data.classes == 5 && m.fleet.size() == 3 && test.size() == 500,
               "scenario is not 3 clients, C=5, 500 test samples");

  std::size_t ensemble_hits = 0;
  std::vector<std::size_t> member_hits(m.fleet.size(), 0);
  for (const auto& s : test) {
    std::vector<double> avg(cfg.data.classes, 0.0);
    for (std::size_t k = 0; k < m.fleet.size(); ++k) {
      const auto p = m.fleet[k].client->predict(s);
      std::vector<double> row(p.begin(), p.end());
      member_hits[k] += oracle_argmax(row) == s.label;
      for (std::size_t c = 0; c < row.size(); ++c)
        avg[c] += row[c] / static_cast<double>(m.fleet.size());
    }
    ensemble_hits += oracle_argmax(avg) == s.label;
  }
  const double n = static_cast<double>(test.size());
  const double oracle_ensemble = static_cast<double>(ensemble_hits) / n;
  double best = 0.0;
  for (std::size_t k = 0; k < m.fleet.size(); ++k) {
    const double acc = static_cast<double>(member_hits[k]) / n;
    best = std::max(best, acc);
    const ClientId id = m.fleet[k].client->id();
    check.expect(std::abs(rec.clients.at(id).test.accuracy - acc) <= kMetricTol,
                 "client " + std::to_string(id) + " accuracy differs from the oracle");
  }
  check.expect(
      std::abs(rec.ensemble.accuracy - oracle_ensemble) <= kMetricTol,
      "reported ensemble " + fmt(rec.ensemble.accuracy) + " vs oracle " + fmt(oracle_ensemble));
  check.expect(oracle_ensemble - best >= kEnsembleGap, "gap below " + fmt(kEnsembleGap));
  check.note("ensemble " + fmt(oracle_ensemble) + ", best member " + fmt(best));
  return check.verdict();
}

// 3. GA and PSO on the server-side fitness context of perfect-vs-random.
Verdict optimizer_soundness() {
  Checker check;
  const auto cfg = shipped("perfect-vs-random");
  auto m = harness::materialize(cfg);
  std::vector<transport::ContributionMessage> msgs;
  for (const auto& p : m.fleet) msgs.push_back(p.client->contribution(1, m.reference));
  auto aligned = aggregation::align(msgs);
  std::map<SampleId, ClassIndex> labels;
  for (const auto& s : m.reference.samples) labels[s.sample_id] = s.label;
  aggregation::attach_labels(aligned, labels);
  const auto perfect = static_cast<std::size_t>(
      std::find(aligned.model_order.begin(), aligned.model_order.end(), ClientId{1}) -
      aligned.model_order.begin());
  const optimizers::FitnessContext ctx(aligned);
  const double grid = grid_optimum(aligned, kGridSteps);

  auto ga_cfg = cfg.strategy.ga;
  ga_cfg.rng_seed = harness::ga_seed(cfg);
  auto pso_cfg = cfg.strategy.pso;
  pso_cfg.rng_seed = harness::pso_seed(cfg);
  check.expect(ga_cfg.population_size == 40 && ga_cfg.generations == 100,
               "GA not at 40 x 100 defaults");
  check.expect(pso_cfg.swarm_size == 20 && pso_cfg.iterations == 100,
               "PSO not at 20 x 100 defaults");

  auto judge = [&](const char* name, const optimizers::OptimizeResult& r, double secs) {
    const std::string n(name);
    check.expect(r.weights[perfect] >= kPerfectWeight, n + " weight " + fmt(r.weights[perfect]));
    check.expect(r.fitness >= grid - kGridSlack,
                 n + " fitness " + fmt(r.fitness) + " vs grid " + fmt(grid));
    check.expect(non_decreasing(r.trace), n + " trace decreases");
    check.expect(secs < 60.0, n + " took " + fmt(secs) + " s");
    check.note(n + " w=" + fmt(r.weights[perfect]) + " fit=" + fmt(r.fitness) + " " + fmt(secs, 2) +
               "s");
  };
  auto start = Clock::now();
  const auto ga = optimizers::ga_optimize(ctx, ga_cfg);
  judge("GA", ga, seconds_since(start));
  start = Clock::now();
  const auto pso = optimizers::pso_optimize(ctx, pso_cfg);
  judge("PSO", pso, seconds_since(start));
  check.note("grid " + fmt(grid));
  return check.verdict();
}

// 4. Stacking over two clients that are each exact on half the classes.
Verdict stacking() {
  Checker check;
  const auto train = disjoint_experts(400);
  const auto test = disjoint_experts(400, 10001);
  const aggregation::StackingConfig cfg;
  check.expect(cfg.max_iterations == kStackingIterationCap, "iteration cap is not 1000");
  const auto fit = aggregation::train_stacking(train, cfg);
  const auto preds = aggregation::predictions(aggregation::predict_stacking(fit.model, test));
  const double acc = accuracy(preds, test.labels);
  double best = 0.0;
  for (std::size_t k = 0; k < test.n_models(); ++k) {
    best = std::max(best, accuracy(aggregation::model_predictions(test, k), test.labels));
  }
  check.expect(accuracy(disjoint_experts_oracle(test), test.labels) == 1.0,
               "fixture is not separable by the trust-the-certain rule");
  check.expect(std::abs(acc - kStackingAccuracy) <= kStackingSlack,
               "stacking accuracy " + fmt(acc));
  check.expect(best <= kBestIndividualCap, "best individual " + fmt(best));
  check.expect(fit.iterations <= kStackingIterationCap,
               std::to_string(fit.iterations) + " iterations");
  check.note("stacking " + fmt(acc) + ", best member " + fmt(best) + ", " +
             std::to_string(fit.iterations) + " iterations");
  return check.verdict();
}

// 5. The KD gap across paper-shape rounds, and the KD gradient.
Verdict distillation_loop() {
  Checker check;
  const auto cfg = shipped("paper-shape");
  check.expect(cfg.distill == distillation::DistillationConfig{}, "distillation not at defaults");
  const auto outcome = harness::execute(cfg);
  const auto& rounds = outcome.reports.at(0).rounds;
  check.expect(rounds.size() == 3 && outcome.reports[0].roster.size() == 2,
               "expected 2 clients over 3 rounds");
  std::vector<double> kd;
  for (const auto& r : rounds) kd.push_back(r.mean_kd.value_or(NAN));
  for (std::size_t i = 1; i < kd.size(); ++i) {
    check.expect(kd[i] <= kd[i - 1], "mean KD rose in round " + std::to_string(i + 1));
  }
  const double drop = 1.0 - kd.back() / kd.front();
  check.expect(drop >= kKdDrop, "KD dropped by " + fmt(drop));

  Rng rng(515);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) worst = std::max(worst, kd_gradient_error(random_kd_instance(rng)));
  check.expect(worst <= kGradientRelTol, "gradient error " + fmt(worst));
  std::string trace;
  for (double v : kd) trace += (trace.empty() ? "" : " > ") + fmt(v);
  check.note("mean KD " + trace + " (drop " + fmt(100 * drop, 3) + "%), worst gradient error " +
             fmt(worst, 2));
  return check.verdict();
}

// 6. Measured bytes against the size formulas, and the upload ratio at large P.
Verdict communication_scaling() {
  Checker check;
  auto cfg = harness::parse_scenario(R"(
name = scaling
seed = 606
rounds = 2
compare_fedavg = true
data.classes = 5
data.features = 6
data.val = 500
client.id = 1
client.kind = trainable
client.epochs = 20
client.id = 2
client.kind = trainable
client.epochs = 20
)");
  const auto outcome = harness::execute(cfg);
  check.expect(outcome.reports.size() == 2, "expected ensemble and fedavg runs");
  const std::uint64_t c = cfg.data.classes;
  const std::uint64_t p = c * cfg.data.features + c;
  std::size_t checked = 0;
  for (const auto& report : outcome.reports) {
    std::uint64_t sum = 0;
    for (const auto& msg : report.messages) {
      const auto expected = msg.kind == transport::MessageKind::kParameters
                                ? oracle_parameter_size(msg.items)
                                : oracle_probability_size(msg.items, msg.n_classes);
      check.expect(msg.bytes == expected, "message " + std::to_string(msg.sequence) + " has " +
                                              std::to_string(msg.bytes) + " bytes");
      if (msg.kind == transport::MessageKind::kContribution) {
        check.expect(msg.items == 100 && msg.n_classes == c, "contribution shape");
      }
      if (msg.kind == transport::MessageKind::kParameters) {
        check.expect(msg.items == p, "parameter count");
      }
      sum += msg.bytes;
      ++checked;
    }
    check.expect(sum == report.total_bytes(), "ledger total differs from the message sum");
  }

  // One round of uploads from two clients at P = 100,000.
  constexpr std::uint64_t kLargeP = 100000, kRef = 100, kC = 5;
  transport::Broker broker;
  std::vector<std::vector<double>> rows(kRef, std::vector<double>(kC, 0.2));
  for (ClientId k = 1; k <= 2; ++k) {
    broker.publish(k, transport::contribution_topic(1), contribution(k, 1, rows));
    broker.publish(k, transport::parameter_topic(1),
                   transport::ParameterMessage{k, 1, std::vector<double>(kLargeP, 0.5)});
  }
  const auto ledger = broker.ledger();
  const auto prob = ledger.total(transport::MessageKind::kContribution);
  const auto params = ledger.total(transport::MessageKind::kParameters);
  check.expect(prob == 2 * oracle_probability_size(kRef, kC),
               "probability upload " + std::to_string(prob));
  check.expect(params == 2 * oracle_parameter_size(kLargeP),
               "parameter upload " + std::to_string(params));
  const double ratio = static_cast<double>(prob) / static_cast<double>(params);
  check.expect(ratio <= kUploadRatioCap, "ratio " + fmt(ratio));
  check.note(std::to_string(checked) + " run messages match; P=100000 upload " +
             std::to_string(prob) + " vs " + std::to_string(params) + " bytes, ratio " +
             fmt(ratio));
  return check.verdict();
}

// 7. One of three clients goes silent from round 2.
Verdict dropout_tolerance() {
  Checker check;
  const auto cfg = shipped("dropout-tolerance");
  const auto outcome = harness::execute(cfg);
  const auto& rounds = outcome.reports.at(0).rounds;
  check.expect(rounds.size() == cfg.distill.rounds,
               "only " + std::to_string(rounds.size()) + " rounds");
  std::string counts;
  for (const auto& r : rounds) {
    const std::size_t expected = r.round < 2 ? 3 : 2;
    check.expect(r.contributors.size() == expected, "round " + std::to_string(r.round) + " has " +
                                                        std::to_string(r.contributors.size()) +
                                                        " contributors");
    double best = 0.0;
    for (ClientId id : r.contributors) best = std::max(best, r.clients.at(id).test.accuracy);
    check.expect(r.ensemble.accuracy >= best, "round " + std::to_string(r.round) + " ensemble " +
                                                   fmt(r.ensemble.accuracy) + " < " + fmt(best));
    counts += (counts.empty() ? "" : "/") + std::to_string(r.contributors.size());
  }
  check.note("contributors per round " + counts + ", final ensemble " +
             fmt(rounds.back().ensemble.accuracy));
  return check.verdict();
}

// 8. Same seed replays byte for byte; a different seed is detected. The
// replay (second run plus comparison) must cost under twice a single run.
Verdict deterministic_replay() {
  Checker check;
  double single = 0.0, replay = 0.0;
  std::size_t scenarios = 0;
  for (const auto& entry : fs::directory_iterator(kScenarios)) {
    if (entry.path().extension() != ".scenario") continue;
    const auto cfg = harness::load_scenario(entry.path());
    const auto name = cfg.name;
    const auto a = scratch_dir("accept-" + name + "-a");
    const auto b = scratch_dir("accept-" + name + "-b");
    const auto c = scratch_dir("accept-" + name + "-c");
    auto start = Clock::now();
    harness::run(cfg, a);
    single += seconds_since(start);
    start = Clock::now();
    harness::run(cfg, b);
    const auto same = harness::replay_check(a, b);
    replay += seconds_since(start);
    check.expect(same.identical, name + " replay differs at " + same.first_difference);

    auto reseeded = cfg;
    reseeded.seed = cfg.seed + 1;
    harness::run(reseeded, c);
    check.expect(!harness::replay_check(a, c).identical, name + " seed change went undetected");
    ++scenarios;
  }
  check.expect(scenarios == 4, "found " + std::to_string(scenarios) + " shipped scenarios");
  check.expect(replay < kReplaySlowdownCap * single,
               "replay " + fmt(replay) + " s vs single " + fmt(single) + " s");
  check.note(std::to_string(scenarios) + " scenarios; single runs " + fmt(single, 3) +
             " s, replays " + fmt(replay, 3) + " s");
  return check.verdict();
}

// 9. Wire format round trip and the reference sizes.
Verdict wire_format() {
  Checker check;
  Rng rng(909);
  for (int i = 0; i < 1000; ++i) {
    const auto msg = random_message(rng);
    const auto bytes = transport::serialize(msg);
    const auto back = transport::deserialize(bytes);
    check.expect(back == msg && transport::serialize(back) == bytes,
                 "message " + std::to_string(i) + " did not round-trip");
  }
  const auto one = transport::serialize(contribution(1, 1, {{0.2, 0.2, 0.2, 0.2, 0.2}}));
  const auto hundred = transport::serialize(
      contribution(1, 1, std::vector<std::vector<double>>(100, std::vector<double>(5, 0.2))));
  const auto params =
      transport::serialize(transport::ParameterMessage{1, 1, std::vector<double>(1000, 0.5)});
  check.expect(one.size() == 48 && oracle_probability_size(1, 5) == 48, "1x5 contribution size");
  check.expect(hundred.size() == 2820 && oracle_probability_size(100, 5) == 2820,
               "100x5 contribution size");
  check.expect(params.size() == 4020 && oracle_parameter_size(1000) == 4020, "1000-parameter size");
  check.note("1000 round trips; sizes " + std::to_string(one.size()) + "/" +
             std::to_string(hundred.size()) + "/" + std::to_string(params.size()));
  return check.verdict();
}

// 10. Macro-F1 and KL against definitional brute force.
Verdict metric_oracles() {
  Checker check;
  int matrices = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 3; ++d) {
          ++matrices;
          const ConfusionMatrix cm(2, {std::uint64_t(a), std::uint64_t(b), std::uint64_t(c),
                                       std::uint64_t(d)});
          if (a + b + c + d == 0) {
            // The empty matrix has no defined score and must be rejected.
            bool rejected = false;
            try {
              macro_f1(cm);
            } catch (const Error& e) {
              rejected = e.code() == Errc::kEmptyMatrix;
            }
            check.expect(rejected, "empty matrix accepted");
            continue;
          }
          const double oracle = oracle_macro_f1({{{a, b}, {c, d}}});
          check.expect(std::abs(macro_f1(cm) - oracle) <= kMetricTol,
                       "matrix " + std::to_string(a) + std::to_string(b) + std::to_string(c) +
                           std::to_string(d));
        }
  Rng rng(1010);
  std::uniform_int_distribution<std::size_t> c_dist(2, 10);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto c = c_dist(rng);
    const auto p = random_simplex(rng, c), q = random_simplex(rng, c);
    worst = std::max(worst, std::abs(distillation::kl_divergence(p, q) - oracle_kl(p, q)));
  }
  check.expect(worst <= kMetricTol, "KL error " + fmt(worst));
  check.note(std::to_string(matrices) + " matrices; worst KL error " + fmt(worst, 2));
  return check.verdict();
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;  // 0: no wall-clock limit at this level
  std::function<Verdict()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "simplex suite", 10.0, simplex_suite},
      {2, "ensemble beats best member", 5.0, ensemble_beats_best},
      {3, "optimizer soundness", 0.0, optimizer_soundness},
      {4, "stacking", 10.0, stacking},
      {5, "distillation loop", 30.0, distillation_loop},
      {6, "communication scaling", 5.0, communication_scaling},
      {7, "dropout tolerance", 10.0, dropout_tolerance},
      {8, "deterministic replay", 0.0, deterministic_replay},
      {9, "wire format", 0.0, wire_format},
      {10, "metric oracles", 0.0, metric_oracles},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = seconds_since(start);
    if (c.limit_seconds > 0.0 && secs >= c.limit_seconds) {
      v.pass = false;
      v.detail += "; over the " + fmt(c.limit_seconds) + " s limit";
    }
    failed += !v.pass;
    std::printf("%s %d %s (%.2f s): %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
