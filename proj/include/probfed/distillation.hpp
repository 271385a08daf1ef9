#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "probfed/core.hpp"
#include "probfed/learners.hpp"
#include "probfed/transport.hpp"

namespace probfed::distillation {

// Shared reference samples. Labels are public (a calibration split) and are
// what the server fits weights and stacking models against.
struct ReferenceSet {
  std::vector<LabeledSample> samples;  // ascending, unique sample ids
  std::uint32_t version = 0;

  std::vector<SampleId> ids() const;
  std::size_t size() const noexcept { return samples.size(); }
};

// Sorts by id; throws Errc::kInvalidArgument on duplicate ids.
ReferenceSet make_reference_set(std::vector<LabeledSample> samples, std::uint32_t version = 0);

// Same samples restricted to the listed feature columns.
ReferenceSet project(const ReferenceSet& ref, std::span<const std::size_t> feature_index);

struct DistillationConfig {
  double kd_learning_rate = 0.05;
  std::size_t kd_steps = 10;
  double epsilon = 1e-9;
  std::size_t rounds = 3;
  std::size_t min_contributions = 2;
  // Weight of local cross-entropy on private labels mixed into the update.
  double ce_mix = 0.0;
  double convergence_tolerance = 1e-6;

  friend bool operator==(const DistillationConfig&, const DistillationConfig&) = default;
};

void validate(const DistillationConfig& cfg);

// KL(p || q) in nats. q is floored at epsilon and renormalized first when
// any entry falls below it; 0·ln(0/q) counts as 0.
double kl_divergence(std::span<const double> p, std::span<const double> q,
                     double epsilon = 1e-9);
inline double kl_divergence(const ProbabilityVector& p, const ProbabilityVector& q,
                            double epsilon = 1e-9) {
  return kl_divergence(p.values(), q.values(), epsilon);
}

// Σ_x KL(P_ens(x) || P_local(x)). Throws Errc::kSampleMismatch on unequal
// lengths.
double kd_loss(std::span<const ProbabilityVector> ensemble,
               std::span<const ProbabilityVector> local, double epsilon = 1e-9);

struct KdObjective {
  double loss = 0.0;              // kd_loss (summed over the reference set)
  std::vector<double> gradient;   // gradient of loss / N, flatten() order
};

// With the targets held fixed, d KL / d logits = softmax(z) − target, so
// the gradient is the soft-label cross-entropy gradient.
KdObjective kd_objective(const learners::SoftmaxLinearModel& model,
                         const ReferenceSet& ref,
                         std::span<const ProbabilityVector> targets,
                         double epsilon = 1e-9);

struct DistillResult {
  learners::SoftmaxLinearModel model;
  std::vector<double> loss_trace;  // kd_loss before each step, then final
};

// kd_steps full-batch steps on the mean KD loss. `targets` must cover the
// reference set exactly, in id order (Errc::kSampleMismatch otherwise).
// `local_data` is only used when cfg.ce_mix > 0.
DistillResult client_distill_update(learners::SoftmaxLinearModel model,
                                    const ReferenceSet& ref,
                                    std::span<const transport::ProbabilityEntry> targets,
                                    const DistillationConfig& cfg,
                                    std::span<const LabeledSample> local_data = {});

}  // namespace probfed::distillation
