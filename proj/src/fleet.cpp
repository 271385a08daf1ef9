#include "probfed/fleet.hpp"

#include <string>

namespace probfed::fleet {

namespace {

std::vector<double> project(std::span<const double> x, std::span<const std::size_t> index) {
  std::vector<double> out;
  out.reserve(index.size());
  for (std::size_t j : index) {
    if (j >= x.size()) {
      throw Error(Errc::kDimensionMismatch, "feature column " + std::to_string(j) +
                                                " outside a " + std::to_string(x.size()) +
                                                "-dimensional sample");
    }
    out.push_back(x[j]);
  }
  return out;
}

}  // namespace

std::vector<transport::ProbabilityEntry> Client::predict_all(
    std::span<const LabeledSample> samples) const {
  std::vector<transport::ProbabilityEntry> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.sample_id, predict(s)});
  return out;
}

transport::ContributionMessage Client::contribution(std::uint32_t round,
                                                    const distillation::ReferenceSet& ref) const {
  transport::ContributionMessage msg;
  msg.client_id = id();
  msg.round = round;
  msg.n_classes = static_cast<std::uint16_t>(n_classes());
  msg.entries = predict_all(ref.samples);
  return msg;
}

SyntheticClient::SyntheticClient(ClientId id, std::string name,
                                 learners::SyntheticClassifier model)
    : Client(id, std::move(name)), model_(std::move(model)) {
  learners::validate(model_);
}

ProbabilityVector SyntheticClient::predict(const LabeledSample& sample) const {
  return learners::synthetic_predict(model_, sample);
}

TrainableClient::TrainableClient(ClientId id, std::string name, std::size_t n_classes,
                                 std::vector<std::size_t> feature_index,
                                 std::vector<LabeledSample> local_data,
                                 TrainingConfig training)
    : Client(id, std::move(name)),
      model_(n_classes, feature_index.size()),
      feature_index_(std::move(feature_index)),
      training_(training) {
  if (feature_index_.empty()) throw Error(Errc::kInvalidSpec, "client sees no features");
  local_data_.reserve(local_data.size());
  for (auto& s : local_data) {
    local_data_.push_back({s.sample_id, project(s.features, feature_index_), s.label});
  }
}

void TrainableClient::train_round(std::uint32_t round) {
  const std::size_t epochs = round <= 1 ? training_.epochs : training_.round_epochs;
  if (epochs == 0 || local_data_.empty()) {
    last_trace_.clear();
    return;
  }
  auto result = learners::train_local(model_, local_data_, epochs, training_.learning_rate,
                                      training_.l2);
  model_ = std::move(result.model);
  last_trace_ = std::move(result.loss_trace);
}

ProbabilityVector TrainableClient::predict(const LabeledSample& sample) const {
  return learners::predict_proba(model_, project(sample.features, feature_index_));
}

std::optional<distillation::DistillResult> TrainableClient::distill(
    const distillation::ReferenceSet& ref,
    std::span<const transport::ProbabilityEntry> targets,
    const distillation::DistillationConfig& cfg) {
  const auto view = distillation::project(ref, feature_index_);
  auto result = distillation::client_distill_update(model_, view, targets, cfg, local_data_);
  model_ = result.model;
  return result;
}

void TrainableClient::set_model(learners::SoftmaxLinearModel model) {
  if (model.n_classes() != model_.n_classes() || model.feature_dim() != model_.feature_dim()) {
    throw Error(Errc::kShapeMismatch, "replacement model has a different shape");
  }
  model_ = std::move(model);
}

}  // namespace probfed::fleet
