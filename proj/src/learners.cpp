#include "probfed/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "probfed/random.hpp"

namespace probfed::learners {

std::vector<std::size_t> apportion(std::size_t n, std::span<const double> proportions) {
  std::vector<std::size_t> counts(proportions.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < proportions.size(); ++c) {
    const double exact = proportions[c] * static_cast<double>(n);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - static_cast<double>(counts[c]), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n && i < remainders.size(); ++i, ++assigned) {
    ++counts[remainders[i].second];
  }
  return counts;
}

std::vector<double> class_mean(const DatasetSpec& spec, ClassIndex cls) {
  std::vector<double> mean(spec.feature_dim, 0.0);
  mean.at(cls) = spec.cluster_separation / std::sqrt(2.0);
  return mean;
}

namespace {

void validate(const DatasetSpec& spec) {
  std::vector<std::string> problems;
  if (spec.n_classes < 2) problems.push_back("n_classes must be at least 2");
  if (spec.feature_dim < spec.n_classes) {
    problems.push_back("feature_dim must be at least n_classes");
  }
  if (spec.class_proportions.size() != spec.n_classes) {
    problems.push_back("class_proportions length differs from n_classes");
  }
  if (spec.n_train == 0 || spec.n_val == 0 || spec.n_test == 0) {
    problems.push_back("split sizes must be positive");
  }
  if (!(spec.cluster_separation >= 0.0) || !std::isfinite(spec.cluster_separation)) {
    problems.push_back("cluster_separation must be finite and non-negative");
  }
  if (!problems.empty()) {
    std::string msg;
    for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
    throw Error(Errc::kInvalidSpec, msg);
  }
}

std::vector<LabeledSample> make_split(const DatasetSpec& spec, std::size_t n,
                                      SampleId& next_id, Rng& rng) {
  const auto counts = apportion(n, spec.class_proportions.values());
  std::vector<ClassIndex> labels;
  labels.reserve(n);
  for (ClassIndex c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], c);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (ClassIndex label : labels) {
    LabeledSample s;
    s.sample_id = next_id++;
    s.label = label;
    s.features = class_mean(spec, label);
    for (double& x : s.features) x += noise(rng);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  validate(spec);
  Rng rng(mix_seed(spec.rng_seed, 0x64617461));  // "data"
  SampleId next_id = 1;
  Dataset d;
  d.train = make_split(spec, spec.n_train, next_id, rng);
  d.val = make_split(spec, spec.n_val, next_id, rng);
  d.test = make_split(spec, spec.n_test, next_id, rng);
  return d;
}

void validate(const SyntheticClassifier& model) {
  const auto c = model.n_classes();
  if (c < 2) throw Error(Errc::kInvalidSpec, "synthetic classifier needs C >= 2 rows");
  for (const auto& row : model.confusion_rows) {
    if (row.size() != c) throw Error(Errc::kInvalidSpec, "confusion profile must be C x C");
  }
  if (!(model.concentration > 0.0)) {
    throw Error(Errc::kInvalidSpec, "concentration must be positive");
  }
}

ProbabilityVector synthetic_predict(const SyntheticClassifier& model,
                                    const LabeledSample& sample) {
  if (sample.label >= model.n_classes()) {
    throw Error(Errc::kInvalidArgument, "label outside the classifier's classes");
  }
  const auto& row = model.confusion_rows[sample.label];
  if (std::isinf(model.concentration)) return row;
  std::vector<double> alpha(row.begin(), row.end());
  for (double& a : alpha) a *= model.concentration;
  Rng rng(mix_seed(model.rng_seed, sample.sample_id));
  return ProbabilityVector::from_scores(sample_dirichlet(rng, alpha));
}

SoftmaxLinearModel::SoftmaxLinearModel(std::size_t n_classes, std::size_t feature_dim)
    : dim_(feature_dim), weights_(n_classes * feature_dim, 0.0), bias_(n_classes, 0.0) {
  if (n_classes < 2) throw Error(Errc::kInvalidArgument, "need at least 2 classes");
}

SoftmaxLinearModel::SoftmaxLinearModel(std::size_t n_classes, std::size_t feature_dim,
                                       std::vector<double> weights,
                                       std::vector<double> bias)
    : dim_(feature_dim), weights_(std::move(weights)), bias_(std::move(bias)) {
  if (n_classes < 2) throw Error(Errc::kInvalidArgument, "need at least 2 classes");
  if (weights_.size() != n_classes * feature_dim || bias_.size() != n_classes) {
    throw Error(Errc::kShapeMismatch, "parameter sizes do not match C x D");
  }
}

std::vector<double> SoftmaxLinearModel::flatten() const {
  std::vector<double> flat(weights_);
  flat.insert(flat.end(), bias_.begin(), bias_.end());
  return flat;
}

SoftmaxLinearModel SoftmaxLinearModel::from_flat(std::size_t n_classes,
                                                 std::size_t feature_dim,
                                                 std::span<const double> params) {
  if (params.size() != n_classes * feature_dim + n_classes) {
    throw Error(Errc::kShapeMismatch, "flat parameter count does not match C x D + C");
  }
  const auto split = params.begin() + static_cast<std::ptrdiff_t>(n_classes * feature_dim);
  return SoftmaxLinearModel(n_classes, feature_dim, {params.begin(), split},
                            {split, params.end()});
}

std::vector<double> SoftmaxLinearModel::logits(std::span<const double> x) const {
  if (x.size() != dim_) {
    throw Error(Errc::kDimensionMismatch, "expected " + std::to_string(dim_) +
                                              " features, got " + std::to_string(x.size()));
  }
  std::vector<double> z(bias_);
  for (std::size_t c = 0; c < z.size(); ++c) {
    const double* w = weights_.data() + c * dim_;
    for (std::size_t j = 0; j < dim_; ++j) z[c] += w[j] * x[j];
  }
  return z;
}

void SoftmaxLinearModel::apply_step(std::span<const double> flat_gradient, double lr) {
  if (flat_gradient.size() != parameter_count()) {
    throw Error(Errc::kShapeMismatch, "gradient size differs from parameter count");
  }
  const std::size_t nw = weights_.size();
  for (std::size_t i = 0; i < nw; ++i) weights_[i] -= lr * flat_gradient[i];
  for (std::size_t c = 0; c < bias_.size(); ++c) bias_[c] -= lr * flat_gradient[nw + c];
}

std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    p[c] = std::exp(logits[c] - top);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

ProbabilityVector predict_proba(const SoftmaxLinearModel& model,
                                std::span<const double> features) {
  return ProbabilityVector(softmax(model.logits(features)));
}

SoftBatch hard_label_batch(std::span<const LabeledSample> data, std::size_t n_classes) {
  SoftBatch batch;
  batch.features.reserve(data.size());
  batch.targets.reserve(data.size());
  for (const auto& s : data) {
    if (s.label >= n_classes) throw Error(Errc::kInvalidArgument, "label out of range");
    batch.features.push_back(s.features);
    std::vector<double> t(n_classes, 0.0);
    t[s.label] = 1.0;
    batch.targets.push_back(std::move(t));
  }
  return batch;
}

LossAndGradient cross_entropy(const SoftmaxLinearModel& model, const SoftBatch& batch,
                              double l2, bool penalize_bias) {
  const std::size_t n = batch.features.size();
  if (n == 0) throw Error(Errc::kInvalidArgument, "empty batch");
  if (batch.targets.size() != n) {
    throw Error(Errc::kLengthMismatch, "features and targets differ in length");
  }
  const std::size_t c_count = model.n_classes();
  const std::size_t d = model.feature_dim();
  LossAndGradient out;
  out.gradient.assign(model.parameter_count(), 0.0);
  double* gw = out.gradient.data();
  double* gb = out.gradient.data() + c_count * d;
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = batch.features[i];
    const auto& t = batch.targets[i];
    if (t.size() != c_count) {
      throw Error(Errc::kDimensionMismatch, "target length differs from class count");
    }
    const auto z = model.logits(x);
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - top);
    const double log_norm = top + std::log(sum);
    for (std::size_t c = 0; c < c_count; ++c) {
      const double log_p = z[c] - log_norm;
      if (t[c] > 0.0) out.loss -= inv_n * t[c] * log_p;
      const double delta = inv_n * (std::exp(log_p) - t[c]);
      double* row = gw + c * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += delta * x[j];
      gb[c] += delta;
    }
  }

  if (l2 > 0.0) {
    const auto w = model.weights();
    double sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      sq += w[i] * w[i];
      gw[i] += l2 * w[i];
    }
    if (penalize_bias) {
      const auto b = model.bias();
      for (std::size_t c = 0; c < b.size(); ++c) {
        sq += b[c] * b[c];
        gb[c] += l2 * b[c];
      }
    }
    out.loss += 0.5 * l2 * sq;
  }
  return out;
}

TrainResult train_local(SoftmaxLinearModel model, std::span<const LabeledSample> data,
                        std::size_t epochs, double lr, double l2) {
  if (data.empty()) throw Error(Errc::kInvalidArgument, "no training data");
  if (!(lr > 0.0)) throw Error(Errc::kInvalidArgument, "learning rate must be positive");
  const SoftBatch batch = hard_label_batch(data, model.n_classes());
  TrainResult result;
  result.loss_trace.reserve(epochs + 1);
  for (std::size_t e = 0;; ++e) {
    auto lg = cross_entropy(model, batch, l2);
    if (!std::isfinite(lg.loss)) {
      throw Error(Errc::kDivergence, "loss became non-finite at epoch " + std::to_string(e));
    }
    result.loss_trace.push_back(lg.loss);
    if (e == epochs) break;
    model.apply_step(lg.gradient, lr);
  }
  result.model = std::move(model);
  return result;
}

SoftmaxLinearModel fedavg_aggregate(std::span<const SoftmaxLinearModel> models) {
  if (models.empty()) throw Error(Errc::kInvalidArgument, "nothing to average");
  const auto c = models.front().n_classes();
  const auto d = models.front().feature_dim();
  std::vector<std::vector<double>> flats;
  flats.reserve(models.size());
  for (const auto& m : models) {
    if (m.n_classes() != c || m.feature_dim() != d) {
      throw Error(Errc::kShapeMismatch, "models differ in shape");
    }
    flats.push_back(m.flatten());
  }
  // Summing each coordinate in sorted order makes the result independent of
  // the order of `models`, bit for bit.
  std::vector<double> mean(flats.front().size());
  std::vector<double> column(models.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    for (std::size_t k = 0; k < flats.size(); ++k) column[k] = flats[k][i];
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double v : column) sum += v;
    mean[i] = sum / static_cast<double>(models.size());
  }
  return SoftmaxLinearModel::from_flat(c, d, mean);
}

}  // namespace probfed::learners
