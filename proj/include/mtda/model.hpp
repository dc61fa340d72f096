#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mtda/autodiff.hpp"
#include "mtda/errors.hpp"
#include "mtda/graph.hpp"
#include "mtda/nn.hpp"
#include "mtda/rng.hpp"

namespace mtda {

enum class BackboneKind { kMlp, kSmallConv };

/// Shapes of every network in the bundle. The small conv backbone is fixed to
/// 3 x 28 x 28 inputs and a 100-dim feature output; the MLP backbone is
/// sized by input_dim/hidden_dim/feature_dim.
struct ArchitectureConfig {
  BackboneKind backbone = BackboneKind::kMlp;
  int n_classes = 0;
  int input_dim = 0;    // MLP backbone only
  int hidden_dim = 64;  // MLP backbone only
  int feature_dim = 32; // MLP backbone only; conv backbone always yields 100
  int disc_hidden = 100;
  double conv_dropout = 0.2;
  double disc_dropout = 0.5;

  static constexpr int kConvChannels = 3;
  static constexpr int kConvSide = 28;
  static constexpr int kConvFeatureDim = 100;

  int effective_feature_dim() const {
    return backbone == BackboneKind::kMlp ? feature_dim : kConvFeatureDim;
  }
  int flat_input_dim() const {
    return backbone == BackboneKind::kMlp ? input_dim
                                          : kConvChannels * kConvSide * kConvSide;
  }

  void validate() const {
    if (n_classes < 2) throw ConfigError("architecture: n_classes must be >= 2");
    if (backbone == BackboneKind::kMlp) {
      if (input_dim < 1) throw ConfigError("architecture: input_dim must be >= 1");
      if (hidden_dim < 1 || feature_dim < 1)
        throw ConfigError("architecture: hidden/feature dims must be >= 1");
    }
    if (disc_hidden < 1) throw ConfigError("architecture: disc_hidden must be >= 1");
    if (conv_dropout < 0.0 || conv_dropout >= 1.0 || disc_dropout < 0.0 ||
        disc_dropout >= 1.0)
      throw ConfigError("architecture: dropout rates must be in [0, 1)");
  }
};

/// How strongly gradients are reversed at the discriminator input as
/// adaptation progresses (p runs 0 -> 1 over a training phase).
enum class RampKind { kProgressive, kConstant };

inline double reversal_coefficient(RampKind ramp, double progress) {
  if (ramp == RampKind::kConstant) return 1.0;
  const double p = std::min(std::max(progress, 0.0), 1.0);
  return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
}

/// Maps a raw input batch to feature vectors. Two variants: a two-layer ReLU
/// MLP for vector tasks and a two-conv/two-FC stack for 28x28 RGB images.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(const ArchitectureConfig& cfg, Rng& rng) : kind_(cfg.backbone) {
    if (kind_ == BackboneKind::kMlp) {
      m1_ = nn::Dense(cfg.input_dim, cfg.hidden_dim, rng);
      m2_ = nn::Dense(cfg.hidden_dim, cfg.feature_dim, rng);
    } else {
      const int side = ArchitectureConfig::kConvSide;
      c1_ = nn::Conv2d({ArchitectureConfig::kConvChannels, side, side, 32, 5}, rng);
      cbn1_ = nn::BatchNorm(32, 24 * 24);
      c2_ = nn::Conv2d({32, 12, 12, 64, 5}, rng);
      cbn2_ = nn::BatchNorm(64, 8 * 8);
      f1_ = nn::Dense(64 * 4 * 4, 100, rng);
      fbn1_ = nn::BatchNorm(100);
      f2_ = nn::Dense(100, 100, rng);
      fbn2_ = nn::BatchNorm(100);
      dropout_ = cfg.conv_dropout;
    }
  }

  Value forward(Tape& t, Value x, bool train, Rng& rng) {
    if (kind_ == BackboneKind::kMlp) {
      Value h = ad::relu(t, m1_(t, x));
      return ad::relu(t, m2_(t, h));
    }
    Value h = ad::relu(t, cbn1_(t, c1_(t, x), train));
    h = ad::dropout(t, h, dropout_, train, rng);
    h = ad::maxpool2d(t, h, {32, 24, 24, 2});
    h = ad::relu(t, cbn2_(t, c2_(t, h), train));
    h = ad::dropout(t, h, dropout_, train, rng);
    h = ad::maxpool2d(t, h, {64, 8, 8, 2});
    h = ad::relu(t, fbn1_(t, f1_(t, h), train));
    h = ad::dropout(t, h, dropout_, train, rng);
    return ad::relu(t, fbn2_(t, f2_(t, h), train));
  }

  void trainable(std::vector<Matrix*>& out) {
    if (kind_ == BackboneKind::kMlp) {
      m1_.trainable(out);
      m2_.trainable(out);
    } else {
      c1_.trainable(out);
      cbn1_.trainable(out);
      c2_.trainable(out);
      cbn2_.trainable(out);
      f1_.trainable(out);
      fbn1_.trainable(out);
      f2_.trainable(out);
      fbn2_.trainable(out);
    }
  }
  void named(const std::string& prefix, nn::NamedState& out) {
    if (kind_ == BackboneKind::kMlp) {
      m1_.named(prefix + ".m1", out);
      m2_.named(prefix + ".m2", out);
    } else {
      c1_.named(prefix + ".c1", out);
      cbn1_.named(prefix + ".cbn1", out);
      c2_.named(prefix + ".c2", out);
      cbn2_.named(prefix + ".cbn2", out);
      f1_.named(prefix + ".f1", out);
      fbn1_.named(prefix + ".fbn1", out);
      f2_.named(prefix + ".f2", out);
      fbn2_.named(prefix + ".fbn2", out);
    }
  }

 private:
  BackboneKind kind_ = BackboneKind::kMlp;
  nn::Dense m1_, m2_;
  nn::Conv2d c1_, c2_;
  nn::BatchNorm cbn1_, cbn2_, fbn1_, fbn2_;
  nn::Dense f1_, f2_;
  double dropout_ = 0.2;
};

/// Domain discriminator over class-conditioned features: three FC layers
/// with ReLU and dropout, emitting one logit per row (source vs target).
struct Discriminator {
  nn::Dense d1, d2, d3;
  double dropout = 0.5;

  Discriminator() = default;
  Discriminator(int input_dim, int hidden, double drop, Rng& rng)
      : d1(input_dim, hidden, rng),
        d2(hidden, hidden, rng),
        d3(hidden, 1, rng, /*gain=*/1.0),
        dropout(drop) {}

  Value forward(Tape& t, Value h, bool train, Rng& rng) {
    Value z = ad::dropout(t, ad::relu(t, d1(t, h)), dropout, train, rng);
    z = ad::dropout(t, ad::relu(t, d2(t, z)), dropout, train, rng);
    return d3(t, z);
  }

  void trainable(std::vector<Matrix*>& out) {
    d1.trainable(out);
    d2.trainable(out);
    d3.trainable(out);
  }
  void named(const std::string& prefix, nn::NamedState& out) {
    d1.named(prefix + ".d1", out);
    d2.named(prefix + ".d2", out);
    d3.named(prefix + ".d3", out);
  }
};

/// The complete model: shared feature extractor, two classifier heads (plain
/// MLP and graph-based), and the adversarial domain discriminator.
class ModelBundle {
 public:
  ModelBundle() = default;
  ModelBundle(const ArchitectureConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int d = cfg.effective_feature_dim();
    extractor_ = FeatureExtractor(cfg, rng);
    mlp_head_ = nn::Dense(d, cfg.n_classes, rng, /*gain=*/1.0);
    edge_ = EdgeNet(d, rng);
    node_ = NodeNet(d, cfg.n_classes, rng);
    disc_ = Discriminator(d * cfg.n_classes, cfg.disc_hidden, cfg.disc_dropout, rng);
  }

  struct ClassifierOut {
    Value features;
    Value logits;  // MLP head
  };

  ClassifierOut classifier_forward(Tape& t, const Matrix& x, bool train, Rng& rng) {
    check_input(x);
    Value feats = extractor_.forward(t, t.constant(x), train, rng);
    return {feats, mlp_head_(t, feats)};
  }

  struct GraphOut {
    Value features;
    Value mlp_logits;
    Value edge_scores;          // n x n probabilities
    Value normalized_affinity;  // n x n
    Value node_logits;          // graph head
  };

  GraphOut graph_forward(Tape& t, const Matrix& x, bool train, Rng& rng) {
    check_input(x);
    Value feats = extractor_.forward(t, t.constant(x), train, rng);
    Value mlp_logits = mlp_head_(t, feats);
    Value scores = edge_.scores(t, feats, train);
    Value norm = normalize_affinity(t, scores);
    Value node_logits = node_.logits(t, feats, norm, train);
    return {feats, mlp_logits, scores, norm, node_logits};
  }

  /// Adversarial branch: conditions features on predicted class probabilities
  /// via a flattened outer product, reverses gradients with the given
  /// coefficient, and scores source-vs-target membership.
  Value discriminator_forward(Tape& t, Value features, Value class_probs,
                              double coefficient, bool train, Rng& rng) {
    Value h = ad::outer_rows(t, class_probs, features);
    Value reversed = ad::gradient_reversal(t, h, coefficient);
    return disc_.forward(t, reversed, train, rng);
  }

  /// Eval-mode class probabilities from the MLP head (no dropout, running
  /// batch-norm statistics; deterministic).
  Matrix mlp_probabilities(const Matrix& x) {
    Tape t;
    Rng scratch(0);
    ClassifierOut out = classifier_forward(t, x, /*train=*/false, scratch);
    return t.val(ad::softmax_rows(t, out.logits));
  }

  /// Eval-mode class probabilities from the graph head.
  Matrix graph_probabilities(const Matrix& x) {
    Tape t;
    Rng scratch(0);
    GraphOut out = graph_forward(t, x, /*train=*/false, scratch);
    return t.val(ad::softmax_rows(t, out.node_logits));
  }

  /// Eval-mode features (embedding export).
  Matrix features(const Matrix& x) {
    Tape t;
    Rng scratch(0);
    Value f = extractor_.forward(t, t.constant(x), /*train=*/false, scratch);
    return t.val(f);
  }

  // Parameter groups for the routed updates.
  std::vector<Matrix*> feature_params() {
    std::vector<Matrix*> out;
    extractor_.trainable(out);
    return out;
  }
  std::vector<Matrix*> mlp_head_params() {
    std::vector<Matrix*> out;
    mlp_head_.trainable(out);
    return out;
  }
  std::vector<Matrix*> edge_params() {
    std::vector<Matrix*> out;
    edge_.trainable(out);
    return out;
  }
  std::vector<Matrix*> node_params() {
    std::vector<Matrix*> out;
    node_.trainable(out);
    return out;
  }
  std::vector<Matrix*> discriminator_params() {
    std::vector<Matrix*> out;
    disc_.trainable(out);
    return out;
  }

  nn::NamedState named_state() {
    nn::NamedState out;
    extractor_.named("extractor", out);
    mlp_head_.named("mlp_head", out);
    edge_.named("edge", out);
    node_.named("node", out);
    disc_.named("disc", out);
    return out;
  }

  const ArchitectureConfig& config() const { return cfg_; }

 private:
  void check_input(const Matrix& x) const {
    if (x.rows() < 1) throw ContractError("model: empty input batch");
    if (x.cols() != cfg_.flat_input_dim())
      throw ContractError("model: input has " + std::to_string(x.cols()) +
                          " features, expected " +
                          std::to_string(cfg_.flat_input_dim()));
  }

  ArchitectureConfig cfg_;
  FeatureExtractor extractor_;
  nn::Dense mlp_head_;
  EdgeNet edge_;
  NodeNet node_;
  Discriminator disc_;
};

/// Index of the largest entry per row.
inline std::vector<int> row_argmax(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    m.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

/// Largest entry per row (prediction confidence for probability rows).
inline std::vector<double> row_max(const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    out[static_cast<std::size_t>(i)] = m.row(i).maxCoeff();
  return out;
}

}  // namespace mtda
