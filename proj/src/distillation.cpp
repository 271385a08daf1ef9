#include "probfed/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace probfed::distillation {

std::vector<SampleId> ReferenceSet::ids() const {
  std::vector<SampleId> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.sample_id);
  return out;
}

ReferenceSet make_reference_set(std::vector<LabeledSample> samples, std::uint32_t version) {
  std::sort(samples.begin(), samples.end(),
            [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].sample_id == samples[i - 1].sample_id) {
      throw Error(Errc::kInvalidArgument,
                  "duplicate reference sample " + std::to_string(samples[i].sample_id));
    }
  }
  return ReferenceSet{std::move(samples), version};
}

ReferenceSet project(const ReferenceSet& ref, std::span<const std::size_t> feature_index) {
  ReferenceSet out;
  out.version = ref.version;
  out.samples.reserve(ref.samples.size());
  for (const auto& s : ref.samples) {
    LabeledSample p{s.sample_id, {}, s.label};
    p.features.reserve(feature_index.size());
    for (std::size_t j : feature_index) {
      if (j >= s.features.size()) {
        throw Error(Errc::kDimensionMismatch, "feature column " + std::to_string(j) +
                                                  " outside a " +
                                                  std::to_string(s.features.size()) +
                                                  "-dimensional sample");
      }
      p.features.push_back(s.features[j]);
    }
    out.samples.push_back(std::move(p));
  }
  return out;
}

void validate(const DistillationConfig& cfg) {
  if (!(cfg.kd_learning_rate > 0.0) || !(cfg.epsilon > 0.0) || cfg.rounds == 0 ||
      cfg.min_contributions == 0) {
    throw Error(Errc::kInvalidArgument, "distillation settings must be positive");
  }
  if (!(cfg.ce_mix >= 0.0 && cfg.ce_mix <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "ce_mix outside [0, 1]");
  }
}

double kl_divergence(std::span<const double> p, std::span<const double> q, double epsilon) {
  if (p.size() != q.size()) {
    throw Error(Errc::kLengthMismatch, "KL operands differ in length");
  }
  std::vector<double> floored(q.begin(), q.end());
  bool touched = false;
  for (double& v : floored) {
    if (v < epsilon) {
      v = epsilon;
      touched = true;
    }
  }
  if (touched) {
    double sum = 0.0;
    for (double v : floored) sum += v;
    for (double& v : floored) v /= sum;
  }
  double kl = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] > 0.0) kl += p[c] * std::log(p[c] / floored[c]);
  }
  return kl;
}

double kd_loss(std::span<const ProbabilityVector> ensemble,
               std::span<const ProbabilityVector> local, double epsilon) {
  if (ensemble.size() != local.size()) {
    throw Error(Errc::kSampleMismatch, std::to_string(ensemble.size()) + " targets vs " +
                                           std::to_string(local.size()) + " local outputs");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    total += kl_divergence(ensemble[i], local[i], epsilon);
  }
  return total;
}

KdObjective kd_objective(const learners::SoftmaxLinearModel& model, const ReferenceSet& ref,
                         std::span<const ProbabilityVector> targets, double epsilon) {
  if (targets.size() != ref.size()) {
    throw Error(Errc::kSampleMismatch, "targets do not cover the reference set");
  }
  if (ref.size() == 0) throw Error(Errc::kInvalidArgument, "empty reference set");
  const std::size_t c_count = model.n_classes();
  const std::size_t d = model.feature_dim();
  KdObjective out;
  out.gradient.assign(model.parameter_count(), 0.0);
  double* gw = out.gradient.data();
  double* gb = gw + c_count * d;
  const double inv_n = 1.0 / static_cast<double>(ref.size());

  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto& x = ref.samples[i].features;
    const auto& t = targets[i];
    if (t.size() != c_count) {
      throw Error(Errc::kDimensionMismatch, "target length differs from class count");
    }
    const auto p = learners::softmax(model.logits(x));
    out.loss += kl_divergence(t.values(), p, epsilon);
    for (std::size_t c = 0; c < c_count; ++c) {
      const double delta = inv_n * (p[c] - t[c]);
      double* row = gw + c * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += delta * x[j];
      gb[c] += delta;
    }
  }
  return out;
}

DistillResult client_distill_update(learners::SoftmaxLinearModel model,
                                    const ReferenceSet& ref,
                                    std::span<const transport::ProbabilityEntry> targets,
                                    const DistillationConfig& cfg,
                                    std::span<const LabeledSample> local_data) {
  validate(cfg);
  if (targets.size() != ref.size()) {
    throw Error(Errc::kSampleMismatch, "targets do not cover the reference set");
  }
  std::vector<ProbabilityVector> soft;
  soft.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].sample_id != ref.samples[i].sample_id) {
      throw Error(Errc::kSampleMismatch,
                  "target id " + std::to_string(targets[i].sample_id) +
                      " does not match reference id " +
                      std::to_string(ref.samples[i].sample_id));
    }
    soft.push_back(targets[i].probs);
  }

  const bool mixing = cfg.ce_mix > 0.0 && !local_data.empty();
  learners::SoftBatch local_batch;
  if (mixing) local_batch = learners::hard_label_batch(local_data, model.n_classes());

  DistillResult result;
  result.loss_trace.reserve(cfg.kd_steps + 1);
  for (std::size_t step = 0;; ++step) {
    auto obj = kd_objective(model, ref, soft, cfg.epsilon);
    if (!std::isfinite(obj.loss)) {
      throw Error(Errc::kDivergence, "KD loss became non-finite at step " + std::to_string(step));
    }
    result.loss_trace.push_back(obj.loss);
    if (step == cfg.kd_steps) break;
    if (mixing) {
      const auto ce = learners::cross_entropy(model, local_batch, 0.0);
      for (std::size_t i = 0; i < obj.gradient.size(); ++i) {
        obj.gradient[i] = (1.0 - cfg.ce_mix) * obj.gradient[i] + cfg.ce_mix * ce.gradient[i];
      }
    }
    model.apply_step(obj.gradient, cfg.kd_learning_rate);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace probfed::distillation
