#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "probfed/core.hpp"
#include "probfed/distillation.hpp"
#include "probfed/learners.hpp"
#include "probfed/transport.hpp"

namespace probfed::fleet {

// A simulated participant. Clients never see each other; they only talk to
// the server through broker messages.
class Client {
 public:
  Client(ClientId id, std::string name) : id_(id), name_(std::move(name)) {}
  virtual ~Client() = default;

  ClientId id() const noexcept { return id_; }
  const std::string& name() const noexcept { return name_; }

  virtual bool trainable() const noexcept = 0;
  virtual std::size_t n_classes() const noexcept = 0;

  // Local training on private data for the given round (1-based).
  virtual void train_round(std::uint32_t round) = 0;

  virtual ProbabilityVector predict(const LabeledSample& sample) const = 0;

  // std::nullopt when the client cannot learn from the broadcast.
  virtual std::optional<distillation::DistillResult> distill(
      const distillation::ReferenceSet& ref,
      std::span<const transport::ProbabilityEntry> targets,
      const distillation::DistillationConfig& cfg) = 0;

  std::vector<transport::ProbabilityEntry> predict_all(
      std::span<const LabeledSample> samples) const;

  transport::ContributionMessage contribution(std::uint32_t round,
                                              const distillation::ReferenceSet& ref) const;

 private:
  ClientId id_;
  std::string name_;
};

class SyntheticClient final : public Client {
 public:
  SyntheticClient(ClientId id, std::string name, learners::SyntheticClassifier model);

  bool trainable() const noexcept override { return false; }
  std::size_t n_classes() const noexcept override { return model_.n_classes(); }
  void train_round(std::uint32_t) override {}
  ProbabilityVector predict(const LabeledSample& sample) const override;
  std::optional<distillation::DistillResult> distill(
      const distillation::ReferenceSet&, std::span<const transport::ProbabilityEntry>,
      const distillation::DistillationConfig&) override {
    return std::nullopt;
  }

  const learners::SyntheticClassifier& model() const noexcept { return model_; }

 private:
  learners::SyntheticClassifier model_;
};

struct TrainingConfig {
  std::size_t epochs = 200;       // first round, from the zero model
  std::size_t round_epochs = 0;   // every later round, warm-started
  double learning_rate = 0.1;
  double l2 = 1e-3;
};

// Softmax regression over a subset of the feature columns.
class TrainableClient final : public Client {
 public:
  TrainableClient(ClientId id, std::string name, std::size_t n_classes,
                  std::vector<std::size_t> feature_index,
                  std::vector<LabeledSample> local_data, TrainingConfig training);

  bool trainable() const noexcept override { return true; }
  std::size_t n_classes() const noexcept override { return model_.n_classes(); }
  void train_round(std::uint32_t round) override;
  ProbabilityVector predict(const LabeledSample& sample) const override;
  std::optional<distillation::DistillResult> distill(
      const distillation::ReferenceSet& ref,
      std::span<const transport::ProbabilityEntry> targets,
      const distillation::DistillationConfig& cfg) override;

  const learners::SoftmaxLinearModel& model() const noexcept { return model_; }
  void set_model(learners::SoftmaxLinearModel model);
  const std::vector<std::size_t>& feature_index() const noexcept { return feature_index_; }
  const std::vector<LabeledSample>& local_data() const noexcept { return local_data_; }
  const std::vector<double>& last_training_trace() const noexcept { return last_trace_; }

 private:
  learners::SoftmaxLinearModel model_;
  std::vector<std::size_t> feature_index_;
  std::vector<LabeledSample> local_data_;  // already projected
  TrainingConfig training_;
  std::vector<double> last_trace_;
};

}  // namespace probfed::fleet
