#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "probfed/error.hpp"

namespace probfed {

using ClassIndex = std::size_t;
using SampleId = std::uint64_t;
using ClientId = std::uint32_t;

// Reserved identity used by the server when it publishes.
inline constexpr ClientId kServerId = 0xFFFFFFFFu;

inline constexpr double kSimplexTolerance = 1e-6;

bool validate_simplex(std::span<const double> v,
                      double tol = kSimplexTolerance);

// Scales a non-negative vector to unit sum. Throws Errc::kAllZero when
// nothing is positive and Errc::kInvalidArgument on negative or non-finite
// entries.
std::vector<double> normalize_to_simplex(std::span<const double> v);

namespace detail {
struct ProbabilityTag {
  static constexpr std::size_t kMinSize = 2;
  static constexpr const char* kName = "ProbabilityVector";
};
struct WeightTag {
  static constexpr std::size_t kMinSize = 1;
  static constexpr const char* kName = "WeightVector";
};
}  // namespace detail

// A point on the probability simplex. Construction validates at
// kSimplexTolerance; the static helpers build one from raw scores.
template <typename Tag>
class SimplexVector {
 public:
  SimplexVector() = default;

  explicit SimplexVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < Tag::kMinSize) {
      throw Error(Errc::kInvalidArgument,
                  std::string(Tag::kName) + " too short");
    }
    if (!validate_simplex(values_)) {
      throw Error(Errc::kSimplexViolation,
                  std::string(Tag::kName) + " is not on the simplex");
    }
  }

  // Normalizes non-negative scores; throws Errc::kAllZero if all are zero.
  static SimplexVector from_scores(std::span<const double> scores) {
    return SimplexVector(normalize_to_simplex(scores));
  }

  static SimplexVector uniform(std::size_t n) {
    return SimplexVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  static SimplexVector one_hot(std::size_t n, std::size_t k) {
    std::vector<double> v(n, 0.0);
    v.at(k) = 1.0;
    return SimplexVector(std::move(v));
  }

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  friend bool operator==(const SimplexVector&, const SimplexVector&) = default;

 private:
  std::vector<double> values_;
};

using ProbabilityVector = SimplexVector<detail::ProbabilityTag>;
using WeightVector = SimplexVector<detail::WeightTag>;

struct LabeledSample {
  SampleId sample_id = 0;
  std::vector<double> features;
  ClassIndex label = 0;
};

// Lowest index wins ties.
ClassIndex argmax_class(std::span<const double> p);
inline ClassIndex argmax_class(const ProbabilityVector& p) {
  return argmax_class(p.values());
}

double accuracy(std::span<const ClassIndex> preds,
                std::span<const ClassIndex> labels);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes);
  ConfusionMatrix(std::size_t n_classes, std::vector<std::uint64_t> counts);

  static ConfusionMatrix from_predictions(std::size_t n_classes,
                                          std::span<const ClassIndex> preds,
                                          std::span<const ClassIndex> labels);

  void add(ClassIndex truth, ClassIndex predicted);

  std::size_t n_classes() const noexcept { return n_; }
  std::uint64_t at(ClassIndex truth, ClassIndex predicted) const;
  std::uint64_t total() const noexcept;
  std::uint64_t support(ClassIndex truth) const;
  std::uint64_t predicted(ClassIndex cls) const;

  // F1 of one class; zero when precision + recall is zero.
  double f1(ClassIndex cls) const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

double macro_f1(const ConfusionMatrix& cm);

// Support-weighted mean of the per-class F1 scores.
double weighted_f1(const ConfusionMatrix& cm);

}  // namespace probfed
