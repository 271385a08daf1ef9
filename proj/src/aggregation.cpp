#include "probfed/aggregation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>
#include <string>

namespace probfed::aggregation {

namespace {

constexpr double kFuseTolerance = 1e-12;

// Convex combinations stay on the simplex up to rounding; only rescale when
// the drift is measurable.
ProbabilityVector renormalized(std::vector<double> v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  if (std::abs(sum - 1.0) > kFuseTolerance) {
    for (double& x : v) x /= sum;
  }
  return ProbabilityVector(std::move(v));
}

void require_models(const AlignedProbabilities& a) {
  if (a.n_models() == 0) throw Error(Errc::kEmptyAlignment, "no models in the alignment");
}

}  // namespace

AlignedProbabilities align(std::span<const transport::ContributionMessage> contributions) {
  AlignedProbabilities out;
  if (contributions.empty()) return out;

  std::vector<const transport::ContributionMessage*> sorted;
  for (const auto& c : contributions) sorted.push_back(&c);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->client_id < b->client_id; });

  out.n_classes = sorted.front()->n_classes;
  const auto round = sorted.front()->round;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& c = *sorted[i];
    if (i > 0 && c.client_id == sorted[i - 1]->client_id) {
      throw Error(Errc::kDuplicateClient, "client " + std::to_string(c.client_id) +
                                              " contributed twice");
    }
    if (c.n_classes != out.n_classes) {
      throw Error(Errc::kInconsistentC, "client " + std::to_string(c.client_id) + " sent C=" +
                                            std::to_string(c.n_classes) + ", expected " +
                                            std::to_string(out.n_classes));
    }
    if (c.round != round) {
      throw Error(Errc::kInvalidArgument, "contributions from different rounds");
    }
    out.model_order.push_back(c.client_id);
  }

  // Entries are sorted by id, so the join is a merge over M cursors.
  std::set<SampleId> everything;
  for (const auto* c : sorted) {
    for (const auto& e : c->entries) everything.insert(e.sample_id);
  }
  std::vector<std::size_t> cursor(sorted.size(), 0);
  for (SampleId id : everything) {
    std::vector<ProbabilityVector> row;
    row.reserve(sorted.size());
    for (std::size_t m = 0; m < sorted.size(); ++m) {
      const auto& entries = sorted[m]->entries;
      auto& k = cursor[m];
      while (k < entries.size() && entries[k].sample_id < id) ++k;
      if (k < entries.size() && entries[k].sample_id == id) row.push_back(entries[k].probs);
    }
    if (row.size() == sorted.size()) {
      out.sample_ids.push_back(id);
      out.probs.push_back(std::move(row));
    } else {
      ++out.dropped;
    }
  }
  return out;
}

void attach_labels(AlignedProbabilities& aligned,
                   const std::map<SampleId, ClassIndex>& labels) {
  std::vector<ClassIndex> out;
  out.reserve(aligned.n_samples());
  for (SampleId id : aligned.sample_ids) {
    auto it = labels.find(id);
    if (it == labels.end()) {
      throw Error(Errc::kSampleMismatch, "no label for sample " + std::to_string(id));
    }
    out.push_back(it->second);
  }
  aligned.labels = std::move(out);
}

AlignedProbabilities select_models(const AlignedProbabilities& aligned,
                                   std::span<const ClientId> order) {
  std::vector<std::size_t> index;
  for (ClientId id : order) {
    auto it = std::find(aligned.model_order.begin(), aligned.model_order.end(), id);
    if (it == aligned.model_order.end()) {
      throw Error(Errc::kOrderMismatch, "client " + std::to_string(id) + " not aligned");
    }
    index.push_back(static_cast<std::size_t>(it - aligned.model_order.begin()));
  }
  AlignedProbabilities out;
  out.model_order.assign(order.begin(), order.end());
  out.n_classes = aligned.n_classes;
  out.sample_ids = aligned.sample_ids;
  out.labels = aligned.labels;
  out.dropped = aligned.dropped;
  out.probs.reserve(aligned.n_samples());
  for (const auto& row : aligned.probs) {
    std::vector<ProbabilityVector> picked;
    for (std::size_t m : index) picked.push_back(row[m]);
    out.probs.push_back(std::move(picked));
  }
  return out;
}

std::vector<ProbabilityVector> mean_fuse(const AlignedProbabilities& a) {
  require_models(a);
  const double m = static_cast<double>(a.n_models());
  std::vector<ProbabilityVector> out;
  out.reserve(a.n_samples());
  for (const auto& row : a.probs) {
    std::vector<double> acc(a.n_classes, 0.0);
    for (const auto& p : row) {
      for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += p[c];
    }
    for (double& v : acc) v /= m;
    out.push_back(renormalized(std::move(acc)));
  }
  return out;
}

std::vector<ProbabilityVector> weighted_fuse(const AlignedProbabilities& a,
                                             const WeightVector& w) {
  require_models(a);
  if (w.size() != a.n_models()) {
    throw Error(Errc::kLengthMismatch, std::to_string(w.size()) + " weights for " +
                                           std::to_string(a.n_models()) + " models");
  }
  std::vector<ProbabilityVector> out;
  out.reserve(a.n_samples());
  for (const auto& row : a.probs) {
    std::vector<double> acc(a.n_classes, 0.0);
    for (std::size_t m = 0; m < row.size(); ++m) {
      for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += w[m] * row[m][c];
    }
    out.push_back(renormalized(std::move(acc)));
  }
  return out;
}

std::vector<ClassIndex> predictions(std::span<const ProbabilityVector> fused) {
  std::vector<ClassIndex> out;
  out.reserve(fused.size());
  for (const auto& p : fused) out.push_back(argmax_class(p));
  return out;
}

std::vector<ClassIndex> model_predictions(const AlignedProbabilities& a, std::size_t model) {
  std::vector<ClassIndex> out;
  out.reserve(a.n_samples());
  for (const auto& row : a.probs) out.push_back(argmax_class(row.at(model)));
  return out;
}

std::vector<std::vector<double>> build_features(const AlignedProbabilities& a) {
  std::vector<std::vector<double>> rows;
  rows.reserve(a.n_samples());
  for (const auto& row : a.probs) {
    std::vector<double> x;
    x.reserve(a.n_models() * a.n_classes);
    for (const auto& p : row) x.insert(x.end(), p.begin(), p.end());
    rows.push_back(std::move(x));
  }
  return rows;
}

StackingFit train_stacking(const AlignedProbabilities& a, const StackingConfig& cfg) {
  require_models(a);
  if (!a.has_labels()) throw Error(Errc::kInvalidArgument, "stacking needs labels");
  const std::set<ClassIndex> distinct(a.labels.begin(), a.labels.end());
  if (distinct.size() < 2) throw Error(Errc::kSingleClass, "fewer than two distinct labels");

  learners::SoftBatch batch;
  batch.features = build_features(a);
  for (ClassIndex y : a.labels) {
    std::vector<double> t(a.n_classes, 0.0);
    t.at(y) = 1.0;
    batch.targets.push_back(std::move(t));
  }
  const double l2 = cfg.l2 / static_cast<double>(a.n_samples());

  StackingFit fit;
  fit.model.model_order = a.model_order;
  learners::SoftmaxLinearModel meta(a.n_classes, a.n_models() * a.n_classes);
  for (std::size_t it = 0;; ++it) {
    auto lg = learners::cross_entropy(meta, batch, l2, /*penalize_bias=*/false);
    if (!std::isfinite(lg.loss)) {
      throw Error(Errc::kDivergence, "meta-classifier loss became non-finite");
    }
    const bool converged =
        !fit.loss_trace.empty() && std::abs(fit.loss_trace.back() - lg.loss) < cfg.tolerance;
    fit.loss_trace.push_back(lg.loss);
    if (converged || it == cfg.max_iterations) break;
    meta.apply_step(lg.gradient, cfg.learning_rate);
    ++fit.iterations;
  }
  fit.model.meta = std::move(meta);
  return fit;
}

std::vector<ProbabilityVector> predict_stacking(const StackingModel& model,
                                                const AlignedProbabilities& a) {
  if (a.model_order != model.model_order) {
    throw Error(Errc::kOrderMismatch, "alignment model order differs from the stacking model");
  }
  if (a.n_models() * a.n_classes != model.meta.feature_dim()) {
    throw Error(Errc::kDimensionMismatch, "feature width differs from the meta-classifier");
  }
  std::vector<ProbabilityVector> out;
  out.reserve(a.n_samples());
  for (const auto& x : build_features(a)) out.push_back(learners::predict_proba(model.meta, x));
  return out;
}

transport::Bytes serialize_stacking(const StackingModel& model) {
  transport::Bytes out;
  auto put = [&out](std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  const auto c = model.meta.n_classes();
  const auto d = model.meta.feature_dim();
  out.push_back('P');
  out.push_back('S');
  out.push_back(0x01);
  out.push_back(0x00);
  put(model.model_order.size(), 2);
  put(c, 2);
  put(d, 4);
  for (ClientId id : model.model_order) put(id, 4);
  for (double v : model.meta.flatten()) {
    put(std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
  }
  return out;
}

StackingModel deserialize_stacking(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto get = [&](int n) {
    if (bytes.size() - pos < static_cast<std::size_t>(n)) {
      throw Error(Errc::kTruncated, "stacking blob ends early");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{bytes[pos++]} << (8 * i);
    return v;
  };
  if (get(1) != 'P' || get(1) != 'S') throw Error(Errc::kBadMagic, "not a stacking blob");
  if (get(1) != 0x01) throw Error(Errc::kBadVersion, "unsupported stacking blob version");
  get(1);
  const auto m = get(2);
  const auto c = get(2);
  const auto d = get(4);
  if (d != m * c) throw Error(Errc::kMalformed, "feature width is not M x C");
  StackingModel model;
  for (std::uint64_t i = 0; i < m; ++i) model.model_order.push_back(static_cast<ClientId>(get(4)));
  std::vector<double> flat(c * d + c);
  for (double& v : flat)
    v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get(4))));
  if (pos != bytes.size()) throw Error(Errc::kMalformed, "trailing bytes");
  model.meta = learners::SoftmaxLinearModel::from_flat(c, d, flat);
  return model;
}

}  // namespace probfed::aggregation
