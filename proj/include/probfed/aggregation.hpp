#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "probfed/core.hpp"
#include "probfed/learners.hpp"
#include "probfed/transport.hpp"

namespace probfed::aggregation {

// Per-sample probability vectors from M models, inner-joined on sample id.
struct AlignedProbabilities {
  std::vector<ClientId> model_order;
  std::size_t n_classes = 0;
  std::vector<SampleId> sample_ids;                   // ascending
  std::vector<std::vector<ProbabilityVector>> probs;  // [sample][model]
  std::vector<ClassIndex> labels;                     // empty, or one per sample
  std::size_t dropped = 0;  // samples missing from at least one client

  std::size_t n_models() const noexcept { return model_order.size(); }
  std::size_t n_samples() const noexcept { return sample_ids.size(); }
  bool has_labels() const noexcept { return !labels.empty() && labels.size() == sample_ids.size(); }
};

// Model order is the ascending sort of client ids. Throws
// Errc::kInconsistentC, Errc::kDuplicateClient, Errc::kInvalidArgument for
// mixed rounds.
AlignedProbabilities align(std::span<const transport::ContributionMessage> contributions);

// Attaches labels by sample id; throws Errc::kSampleMismatch if one is missing.
void attach_labels(AlignedProbabilities& aligned,
                   const std::map<SampleId, ClassIndex>& labels);

// Keeps only the listed models, in the given order.
AlignedProbabilities select_models(const AlignedProbabilities& aligned,
                                   std::span<const ClientId> order);

std::vector<ProbabilityVector> mean_fuse(const AlignedProbabilities& a);
std::vector<ProbabilityVector> weighted_fuse(const AlignedProbabilities& a,
                                             const WeightVector& w);

std::vector<ClassIndex> predictions(std::span<const ProbabilityVector> fused);
// Predictions of one model of the alignment.
std::vector<ClassIndex> model_predictions(const AlignedProbabilities& a, std::size_t model);

// Rows [p^(m1), ..., p^(mM)] of length M·C, in model order.
std::vector<std::vector<double>> build_features(const AlignedProbabilities& a);

struct StackingConfig {
  double l2 = 1.0;  // penalty strength against the summed cross-entropy
  std::size_t max_iterations = 1000;
  double tolerance = 1e-6;
  double learning_rate = 0.5;

  friend bool operator==(const StackingConfig&, const StackingConfig&) = default;
};

// Multinomial logistic meta-classifier over concatenated probabilities.
struct StackingModel {
  learners::SoftmaxLinearModel meta;
  std::vector<ClientId> model_order;
};

struct StackingFit {
  StackingModel model;
  std::vector<double> loss_trace;
  std::size_t iterations = 0;
};

// Gradient descent on mean cross-entropy + (l2 / 2N)·||W||² (the summed
// objective scaled by 1/N; bias unpenalized), until the loss changes by
// less than `tolerance` or max_iterations steps are taken.
// Throws Errc::kSingleClass, Errc::kDivergence.
StackingFit train_stacking(const AlignedProbabilities& a, const StackingConfig& cfg = {});

// Throws Errc::kOrderMismatch if the alignment's model order differs.
std::vector<ProbabilityVector> predict_stacking(const StackingModel& model,
                                                const AlignedProbabilities& a);

// Versioned blob: "PS", version 0x01, reserved byte, M u16, C u16, D u32,
// M client ids u32, then C·D weights and C biases as 32-bit floats, all
// little-endian.
transport::Bytes serialize_stacking(const StackingModel& model);
StackingModel deserialize_stacking(std::span<const std::uint8_t> bytes);

}  // namespace probfed::aggregation
