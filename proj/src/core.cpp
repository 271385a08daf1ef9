#include "probfed/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace probfed {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kAllZero: return "AllZero";
    case Errc::kLengthMismatch: return "LengthMismatch";
    case Errc::kEmptyMatrix: return "EmptyMatrix";
    case Errc::kSimplexViolation: return "SimplexViolation";
    case Errc::kBadMagic: return "BadMagic";
    case Errc::kBadVersion: return "BadVersion";
    case Errc::kBadKind: return "BadKind";
    case Errc::kTruncated: return "Truncated";
    case Errc::kMalformed: return "Malformed";
    case Errc::kOversize: return "Oversize";
    case Errc::kBrokerUnavailable: return "BrokerUnavailable";
    case Errc::kInvalidSpec: return "InvalidSpec";
    case Errc::kDivergence: return "Divergence";
    case Errc::kDimensionMismatch: return "DimensionMismatch";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kInconsistentC: return "InconsistentC";
    case Errc::kDuplicateClient: return "DuplicateClient";
    case Errc::kEmptyAlignment: return "EmptyAlignment";
    case Errc::kSingleClass: return "SingleClass";
    case Errc::kOrderMismatch: return "OrderMismatch";
    case Errc::kBadCut: return "BadCut";
    case Errc::kEmptyContext: return "EmptyContext";
    case Errc::kSampleMismatch: return "SampleMismatch";
    case Errc::kInsufficientContributions: return "InsufficientContributions";
    case Errc::kFutureRound: return "FutureRound";
    case Errc::kNotEligible: return "NotEligible";
    case Errc::kScenarioMismatch: return "ScenarioMismatch";
    case Errc::kParseError: return "ParseError";
    case Errc::kValidationError: return "ValidationError";
    case Errc::kMissingArtifact: return "MissingArtifact";
    case Errc::kIo: return "Io";
  }
  return "Unknown";
}

bool validate_simplex(std::span<const double> v, double tol) {
  if (v.empty()) return false;
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= tol;
}

std::vector<double> normalize_to_simplex(std::span<const double> v) {
  if (v.empty()) throw Error(Errc::kInvalidArgument, "empty vector");
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw Error(Errc::kInvalidArgument,
                  "negative or non-finite entry in normalize_to_simplex");
    }
    sum += x;
  }
  if (sum == 0.0) throw Error(Errc::kAllZero, "every entry is zero");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= sum;
  return out;
}

ClassIndex argmax_class(std::span<const double> p) {
  if (p.empty()) throw Error(Errc::kInvalidArgument, "argmax of empty vector");
  ClassIndex best = 0;
  for (ClassIndex i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

double accuracy(std::span<const ClassIndex> preds,
                std::span<const ClassIndex> labels) {
  if (preds.size() != labels.size()) {
    throw Error(Errc::kLengthMismatch,
                std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw Error(Errc::kLengthMismatch, "no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes)
    : n_(n_classes), counts_(n_classes * n_classes, 0) {
  if (n_classes == 0) throw Error(Errc::kInvalidArgument, "zero classes");
}

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes,
                                 std::vector<std::uint64_t> counts)
    : n_(n_classes), counts_(std::move(counts)) {
  if (n_classes == 0 || counts_.size() != n_ * n_) {
    throw Error(Errc::kInvalidArgument, "confusion matrix must be C x C");
  }
}

ConfusionMatrix ConfusionMatrix::from_predictions(
    std::size_t n_classes, std::span<const ClassIndex> preds,
    std::span<const ClassIndex> labels) {
  if (preds.size() != labels.size()) {
    throw Error(Errc::kLengthMismatch, "predictions and labels differ");
  }
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) cm.add(labels[i], preds[i]);
  return cm;
}

void ConfusionMatrix::add(ClassIndex truth, ClassIndex predicted) {
  if (truth >= n_ || predicted >= n_) {
    throw Error(Errc::kInvalidArgument, "class index out of range");
  }
  ++counts_[truth * n_ + predicted];
}

std::uint64_t ConfusionMatrix::at(ClassIndex truth, ClassIndex predicted) const {
  return counts_.at(truth * n_ + predicted);
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::support(ClassIndex truth) const {
  std::uint64_t s = 0;
  for (ClassIndex p = 0; p < n_; ++p) s += at(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::predicted(ClassIndex cls) const {
  std::uint64_t s = 0;
  for (ClassIndex t = 0; t < n_; ++t) s += at(t, cls);
  return s;
}

double ConfusionMatrix::f1(ClassIndex cls) const {
  // F1 = 2TP / (2TP + FP + FN); the zero-denominator case is the
  // precision + recall = 0 convention.
  const auto tp = static_cast<double>(at(cls, cls));
  const auto fp = static_cast<double>(predicted(cls)) - tp;
  const auto fn = static_cast<double>(support(cls)) - tp;
  const double denom = 2.0 * tp + fp + fn;
  if (tp == 0.0 || denom == 0.0) return 0.0;
  return 2.0 * tp / denom;
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error(Errc::kEmptyMatrix, "no samples");
  double sum = 0.0;
  for (ClassIndex c = 0; c < cm.n_classes(); ++c) sum += cm.f1(c);
  return sum / static_cast<double>(cm.n_classes());
}

double weighted_f1(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw Error(Errc::kEmptyMatrix, "no samples");
  double sum = 0.0;
  for (ClassIndex c = 0; c < cm.n_classes(); ++c) {
    sum += cm.f1(c) * static_cast<double>(cm.support(c));
  }
  return sum / static_cast<double>(total);
}

}  // namespace probfed
