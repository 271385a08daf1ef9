#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "probfed/core.hpp"

namespace probfed::learners {

struct DatasetSpec {
  std::size_t n_classes = 2;
  std::size_t feature_dim = 2;
  WeightVector class_proportions = WeightVector::uniform(2);
  std::size_t n_train = 100;
  std::size_t n_val = 100;
  std::size_t n_test = 100;
  double cluster_separation = 3.0;
  std::uint64_t rng_seed = 0;
};

struct Dataset {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> val;
  std::vector<LabeledSample> test;
};

// Largest-remainder apportionment of `n` over `proportions`; ties in the
// remainder go to the lower class index.
std::vector<std::size_t> apportion(std::size_t n, std::span<const double> proportions);

// Mean of class `cls`: (separation / sqrt 2) along axis `cls`, so every pair
// of class means sits exactly `separation` apart. Requires feature_dim >= C.
std::vector<double> class_mean(const DatasetSpec& spec, ClassIndex cls);

// Unit-covariance Gaussian clusters. Sample ids run 1..N over train, then
// val, then test. Throws Errc::kInvalidSpec.
Dataset generate_dataset(const DatasetSpec& spec);

// Fixed-profile client: row r of the confusion profile is the output
// distribution when the true class is r. With a finite concentration each
// answer is a Dirichlet draw around that row, seeded by (rng_seed,
// sample_id), so the same sample always gets the same answer.
struct SyntheticClassifier {
  std::vector<ProbabilityVector> confusion_rows;
  double concentration = std::numeric_limits<double>::infinity();
  std::uint64_t rng_seed = 0;

  std::size_t n_classes() const noexcept { return confusion_rows.size(); }
};

void validate(const SyntheticClassifier& model);

ProbabilityVector synthetic_predict(const SyntheticClassifier& model,
                                    const LabeledSample& sample);

// Multinomial logistic regression: logits = W x + b, W is C x D row-major.
class SoftmaxLinearModel {
 public:
  SoftmaxLinearModel() = default;
  // Zero-initialized.
  SoftmaxLinearModel(std::size_t n_classes, std::size_t feature_dim);
  SoftmaxLinearModel(std::size_t n_classes, std::size_t feature_dim,
                     std::vector<double> weights, std::vector<double> bias);

  std::size_t n_classes() const noexcept { return bias_.size(); }
  std::size_t feature_dim() const noexcept { return dim_; }
  std::size_t parameter_count() const noexcept { return weights_.size() + bias_.size(); }

  double weight(std::size_t cls, std::size_t j) const { return weights_[cls * dim_ + j]; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<const double> bias() const noexcept { return bias_; }

  // Flat parameter vector: weights row-major, then bias.
  std::vector<double> flatten() const;
  static SoftmaxLinearModel from_flat(std::size_t n_classes, std::size_t feature_dim,
                                      std::span<const double> params);

  std::vector<double> logits(std::span<const double> x) const;

  // θ ← θ − lr·g for a flat gradient in flatten() order.
  void apply_step(std::span<const double> flat_gradient, double lr);

  friend bool operator==(const SoftmaxLinearModel&, const SoftmaxLinearModel&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

ProbabilityVector predict_proba(const SoftmaxLinearModel& model,
                                std::span<const double> features);

// Rows of features with a target distribution per row (one-hot for hard
// labels).
struct SoftBatch {
  std::vector<std::vector<double>> features;
  std::vector<std::vector<double>> targets;
};

SoftBatch hard_label_batch(std::span<const LabeledSample> data, std::size_t n_classes);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // flatten() order
};

// Mean soft-target cross-entropy over the batch plus (l2/2)·||θ||² (bias
// included when penalize_bias). The gradient of the data term is
// (1/N) Σ (softmax(Wx+b) − t) x^T.
LossAndGradient cross_entropy(const SoftmaxLinearModel& model, const SoftBatch& batch,
                              double l2, bool penalize_bias = true);

struct TrainResult {
  SoftmaxLinearModel model;
  std::vector<double> loss_trace;  // loss before each step, then the final loss
};

// Full-batch gradient descent on mean cross-entropy + (l2/2)||θ||².
// Throws Errc::kDivergence if the loss stops being finite.
TrainResult train_local(SoftmaxLinearModel model, std::span<const LabeledSample> data,
                        std::size_t epochs, double lr, double l2);

// Element-wise mean of the parameters. Throws Errc::kShapeMismatch.
SoftmaxLinearModel fedavg_aggregate(std::span<const SoftmaxLinearModel> models);

}  // namespace probfed::learners
