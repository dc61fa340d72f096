#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mtda/errors.hpp"
#include "mtda/rng.hpp"

namespace mtda {

/// One observation. Unlabeled samples (adaptation targets) have no label;
/// evaluation splits and the source domain always do.
struct Sample {
  Eigen::VectorXd features;
  std::optional<int> label;
  int domain_id = 0;
  std::uint64_t uid = 0;
};

struct DomainDataset {
  std::string name;
  int domain_id = 0;
  std::vector<Sample> samples;
};

enum class InputKind { kVector, kImage };

struct InputShape {
  InputKind kind = InputKind::kVector;
  int dim = 0;  // kVector only
  int channels = 0, height = 0, width = 0;  // kImage only
  int flat_dim() const {
    return kind == InputKind::kVector ? dim : channels * height * width;
  }
};

/// A full adaptation problem: one labeled source domain, one or more
/// unlabeled target domains, and labeled held-out evaluation splits.
struct MTDATask {
  DomainDataset source;
  std::vector<DomainDataset> targets;
  std::vector<DomainDataset> eval_splits;  // one per domain, source first
  int n_classes = 0;
  InputShape input;
  /// Ground-truth labels of unlabeled target training samples, kept aside for
  /// diagnostics (pseudo-label quality audits). Never read by training code.
  std::unordered_map<std::uint64_t, int> latent_target_labels;

  const DomainDataset* eval_split_for(int domain_id) const {
    for (const auto& d : eval_splits)
      if (d.domain_id == domain_id) return &d;
    return nullptr;
  }

  const DomainDataset* target_by_id(int domain_id) const {
    for (const auto& t : targets)
      if (t.domain_id == domain_id) return &t;
    return nullptr;
  }

  void validate() const {
    if (n_classes < 2) throw DatasetError("task: need at least 2 classes");
    if (targets.empty()) throw DatasetError("task: need at least one target domain");
    if (source.samples.empty()) throw DatasetError("task: source domain is empty");
    const int flat = input.flat_dim();
    if (flat <= 0) throw DatasetError("task: input shape has no features");

    std::unordered_set<std::uint64_t> uids;
    std::unordered_set<int> domain_ids{source.domain_id};
    auto check_samples = [&](const DomainDataset& d, bool want_labels) {
      if (d.samples.empty())
        throw DatasetError("task: domain '" + d.name + "' is empty");
      for (const Sample& s : d.samples) {
        if (s.features.size() != flat)
          throw DatasetError("task: sample feature size mismatch in '" + d.name + "'");
        if (!s.features.allFinite())
          throw DatasetError("task: non-finite features in '" + d.name + "'");
        if (want_labels) {
          if (!s.label || *s.label < 0 || *s.label >= n_classes)
            throw DatasetError("task: missing or out-of-range label in '" + d.name + "'");
        } else if (s.label) {
          throw DatasetError("task: unexpected label on unlabeled sample in '" + d.name + "'");
        }
        if (s.domain_id != d.domain_id)
          throw DatasetError("task: sample domain_id mismatch in '" + d.name + "'");
        if (!uids.insert(s.uid).second)
          throw DatasetError("task: duplicate uid " + std::to_string(s.uid));
      }
    };
    check_samples(source, true);
    for (const auto& t : targets) {
      if (!domain_ids.insert(t.domain_id).second)
        throw DatasetError("task: duplicate domain id " + std::to_string(t.domain_id));
      check_samples(t, false);
    }
    for (const auto& e : eval_splits) {
      if (domain_ids.find(e.domain_id) == domain_ids.end())
        throw DatasetError("task: eval split for unknown domain id " +
                           std::to_string(e.domain_id));
      check_samples(e, true);
    }
  }
};

/// Recipe for a synthetic adaptation problem. Class centroids are drawn from
/// a standard normal; each target applies a rotation by `shift` radians in a
/// shared random 2-plane plus a translation of length `shift` along a shared
/// random direction, so larger magnitudes give strictly harder targets.
struct SyntheticSpec {
  int n_classes = 4;
  int feature_dim = 16;
  int samples_per_class = 25;       // per domain, training split
  int eval_samples_per_class = 0;   // 0: same as samples_per_class
  std::vector<double> shift_magnitudes{0.5};  // one per target domain
  double noise_scale = 0.3;
  std::uint64_t seed = 0;
};

namespace detail {

inline Eigen::VectorXd random_unit(Rng& rng, int d) {
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v.normalized();
}

/// Rotates x by `angle` within span(u, v); u, v must be orthonormal.
inline Eigen::VectorXd rotate_in_plane(const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& u,
                                       const Eigen::VectorXd& v, double angle) {
  const double pu = u.dot(x), pv = v.dot(x);
  const double c = std::cos(angle), s = std::sin(angle);
  return x - pu * u - pv * v + (pu * c - pv * s) * u + (pu * s + pv * c) * v;
}

}  // namespace detail

inline MTDATask generate_synthetic_task(const SyntheticSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("synthetic: n_classes must be >= 2");
  if (spec.feature_dim < 2) throw ConfigError("synthetic: feature_dim must be >= 2");
  if (spec.samples_per_class < 1) throw ConfigError("synthetic: samples_per_class must be >= 1");
  if (spec.eval_samples_per_class < 0)
    throw ConfigError("synthetic: eval_samples_per_class must be >= 0");
  if (spec.shift_magnitudes.empty())
    throw ConfigError("synthetic: need at least one target shift magnitude");
  for (double m : spec.shift_magnitudes)
    if (m < 0.0) throw ConfigError("synthetic: shift magnitudes must be nonnegative");
  if (spec.noise_scale < 0.0) throw ConfigError("synthetic: noise_scale must be >= 0");

  const int d = spec.feature_dim;
  const int eval_per_class =
      spec.eval_samples_per_class > 0 ? spec.eval_samples_per_class : spec.samples_per_class;
  Rng rng(spec.seed);

  // Shared geometry: class centroids, rotation plane, translation direction.
  std::vector<Eigen::VectorXd> centroids(static_cast<std::size_t>(spec.n_classes));
  for (auto& c : centroids) {
    c.resize(d);
    for (int i = 0; i < d; ++i) c(i) = rng.normal();
  }
  Eigen::VectorXd u = detail::random_unit(rng, d);
  Eigen::VectorXd v = detail::random_unit(rng, d);
  v = (v - u.dot(v) * u).normalized();  // Gram-Schmidt
  const Eigen::VectorXd w = detail::random_unit(rng, d);

  MTDATask task;
  task.n_classes = spec.n_classes;
  task.input = InputShape{InputKind::kVector, d, 0, 0, 0};

  const int n_domains = 1 + static_cast<int>(spec.shift_magnitudes.size());
  constexpr std::uint64_t kDomainStride = 1'000'000;
  constexpr std::uint64_t kEvalOffset = 500'000;

  for (int dom = 0; dom < n_domains; ++dom) {
    const double shift = dom == 0 ? 0.0 : spec.shift_magnitudes[static_cast<std::size_t>(dom - 1)];
    std::vector<Eigen::VectorXd> dom_centroids = centroids;
    if (dom != 0) {
      for (auto& c : dom_centroids)
        c = detail::rotate_in_plane(c, u, v, shift) + shift * w;
    }
    auto draw = [&](int cls) {
      Eigen::VectorXd x = dom_centroids[static_cast<std::size_t>(cls)];
      for (int i = 0; i < d; ++i) x(i) += spec.noise_scale * rng.normal();
      return x;
    };

    DomainDataset train;
    train.domain_id = dom;
    train.name = dom == 0 ? "source" : "target_" + std::to_string(dom - 1);
    std::uint64_t idx = 0;
    for (int cls = 0; cls < spec.n_classes; ++cls)
      for (int k = 0; k < spec.samples_per_class; ++k) {
        Sample s;
        s.features = draw(cls);
        s.domain_id = dom;
        s.uid = static_cast<std::uint64_t>(dom) * kDomainStride + idx++;
        if (dom == 0) {
          s.label = cls;
        } else {
          task.latent_target_labels[s.uid] = cls;
        }
        train.samples.push_back(std::move(s));
      }

    DomainDataset eval;
    eval.domain_id = dom;
    eval.name = train.name + "_eval";
    std::uint64_t eidx = 0;
    for (int cls = 0; cls < spec.n_classes; ++cls)
      for (int k = 0; k < eval_per_class; ++k) {
        Sample s;
        s.features = draw(cls);
        s.label = cls;
        s.domain_id = dom;
        s.uid = static_cast<std::uint64_t>(dom) * kDomainStride + kEvalOffset + eidx++;
        eval.samples.push_back(std::move(s));
      }

    if (dom == 0) {
      task.source = std::move(train);
    } else {
      task.targets.push_back(std::move(train));
    }
    task.eval_splits.push_back(std::move(eval));
  }

  task.validate();
  return task;
}

/// Cycles through a pool in shuffled order, reshuffling after each pass.
/// Holds a reference: the pool must outlive the sampler and stay unchanged.
class EpochSampler {
 public:
  EpochSampler(const std::vector<Sample>& pool, Rng& rng) : pool_(&pool), rng_(&rng) {
    if (pool.empty()) throw ContractError("sampler: empty pool");
    order_.resize(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) order_[i] = i;
    reshuffle();
  }

  const Sample& next() {
    if (cursor_ == order_.size()) reshuffle();
    return (*pool_)[order_[cursor_++]];
  }

  std::size_t pool_size() const { return pool_->size(); }

 private:
  void reshuffle() {
    rng_->shuffle(order_);
    cursor_ = 0;
  }

  const std::vector<Sample>* pool_;
  Rng* rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct MiniBatch {
  std::vector<Sample> labeled;    // drawn from the labeled pool
  std::vector<Sample> unlabeled;  // drawn from the target pool(s)
};

/// Draws balanced minibatches: `batch` labeled samples plus `batch` unlabeled
/// ones. With several unlabeled pools the draw round-robins across them
/// (stratified mode); with one pool it cycles that pool's shuffled order.
class MiniBatchSampler {
 public:
  MiniBatchSampler(const std::vector<Sample>& labeled_pool,
                   std::vector<const std::vector<Sample>*> unlabeled_pools,
                   int batch, Rng& rng)
      : batch_(batch), labeled_(labeled_pool, rng) {
    if (batch < 1) throw ConfigError("sampler: batch size must be >= 1");
    if (unlabeled_pools.empty()) throw ContractError("sampler: no unlabeled pools");
    for (const auto* pool : unlabeled_pools) unlabeled_.emplace_back(*pool, rng);
    std::size_t total_unlabeled = 0;
    for (const auto& s : unlabeled_) total_unlabeled += s.pool_size();
    if (labeled_pool.size() < static_cast<std::size_t>(batch) ||
        total_unlabeled < static_cast<std::size_t>(batch)) {
      std::cerr << "warning: pool smaller than batch size (" << labeled_pool.size()
                << " labeled / " << total_unlabeled << " unlabeled vs batch " << batch
                << "); batches will repeat samples\n";
    }
  }

  MiniBatch next() {
    MiniBatch mb;
    mb.labeled.reserve(static_cast<std::size_t>(batch_));
    mb.unlabeled.reserve(static_cast<std::size_t>(batch_));
    for (int i = 0; i < batch_; ++i) mb.labeled.push_back(labeled_.next());
    for (int i = 0; i < batch_; ++i) {
      mb.unlabeled.push_back(unlabeled_[next_pool_].next());
      next_pool_ = (next_pool_ + 1) % unlabeled_.size();
    }
    return mb;
  }

 private:
  int batch_;
  EpochSampler labeled_;
  std::vector<EpochSampler> unlabeled_;
  std::size_t next_pool_ = 0;
};

/// Stacks sample features as matrix rows.
inline Eigen::MatrixXd feature_matrix(const std::vector<Sample>& samples) {
  if (samples.empty()) throw ContractError("feature_matrix: empty sample list");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(samples.size()), samples[0].features.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].features.size() != m.cols())
      throw ContractError("feature_matrix: inconsistent feature sizes");
    m.row(static_cast<Eigen::Index>(i)) = samples[i].features.transpose();
  }
  return m;
}

/// Extracts labels; throws if any sample is unlabeled.
inline std::vector<int> label_vector(const std::vector<Sample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    if (!s.label) throw ContractError("label_vector: unlabeled sample");
    out.push_back(*s.label);
  }
  return out;
}

}  // namespace mtda
