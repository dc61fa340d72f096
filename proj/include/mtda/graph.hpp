#pragma once

#include <optional>
#include <vector>

#include "mtda/autodiff.hpp"
#include "mtda/errors.hpp"
#include "mtda/nn.hpp"

namespace mtda {

using ad::Matrix;
using ad::Tape;
using ad::Value;

/// Scores every ordered pair of nodes with a small MLP over the absolute
/// feature difference, ending in a sigmoid. Because |v_i - v_j| is symmetric
/// in (i, j), the resulting n x n probability matrix is exactly symmetric.
struct EdgeNet {
  nn::Dense l1, l2, l3;
  nn::BatchNorm bn1, bn2;

  EdgeNet() = default;
  EdgeNet(int feature_dim, Rng& rng)
      : l1(feature_dim, feature_dim, rng),
        l2(feature_dim, feature_dim, rng),
        l3(feature_dim, 1, rng, /*gain=*/1.0),
        bn1(feature_dim),
        bn2(feature_dim) {}

  /// nodes: n x d feature matrix; returns n x n edge probabilities.
  Value scores(Tape& t, Value nodes, bool train) {
    const Eigen::Index n = t.val(nodes).rows();
    if (n < 2) throw GraphError("edge scores: need at least 2 nodes");
    Value pairs = ad::pairwise_absdiff(t, nodes);  // n^2 x d
    Value h = ad::relu(t, bn1(t, l1(t, pairs), train));
    h = ad::relu(t, bn2(t, l2(t, h), train));
    Value probs = ad::sigmoid(t, l3(t, h));  // n^2 x 1
    return ad::reshape_rowmajor(t, probs, static_cast<int>(n), static_cast<int>(n));
  }

  void trainable(std::vector<Matrix*>& out) {
    l1.trainable(out);
    l2.trainable(out);
    l3.trainable(out);
    bn1.trainable(out);
    bn2.trainable(out);
  }
  void named(const std::string& prefix, nn::NamedState& out) {
    l1.named(prefix + ".l1", out);
    l2.named(prefix + ".l2", out);
    l3.named(prefix + ".l3", out);
    bn1.named(prefix + ".bn1", out);
    bn2.named(prefix + ".bn2", out);
  }
};

/// Adds self loops and applies the symmetric degree normalization
/// M^{-1/2} (A + I) M^{-1/2}, where m_i is the i-th row sum of A + I.
inline Value normalize_affinity(Tape& t, Value raw) {
  const Matrix& a = t.val(raw);
  if (a.rows() != a.cols() || a.rows() < 1)
    throw GraphError("normalize_affinity: square matrix required");
  const int n = static_cast<int>(a.rows());
  Value with_loops = ad::add(t, raw, t.constant(Matrix::Identity(n, n)));
  Value degree = ad::row_sum(t, with_loops);             // n x 1, >= 1 entrywise
  Value inv_sqrt = ad::pow_scalar(t, degree, -0.5);      // n x 1
  Value left = ad::mul_colvec(t, with_loops, inv_sqrt);
  return ad::mul_rowvec(t, left, ad::reshape_rowmajor(t, inv_sqrt, 1, n));
}

struct NormalizedAffinity {
  Matrix normalized;
  Eigen::VectorXd degree;
};

/// Tape-free variant for evaluation-time use and inspection.
inline NormalizedAffinity normalize_affinity(const Matrix& raw) {
  if (raw.rows() != raw.cols() || raw.rows() < 1)
    throw GraphError("normalize_affinity: square matrix required");
  const Eigen::Index n = raw.rows();
  Matrix with_loops = raw + Matrix::Identity(n, n);
  NormalizedAffinity out;
  out.degree = with_loops.rowwise().sum();
  const Eigen::VectorXd inv_sqrt = out.degree.array().rsqrt();
  out.normalized =
      inv_sqrt.asDiagonal() * with_loops * inv_sqrt.asDiagonal();
  return out;
}

/// One round of neighborhood aggregation: row i becomes sum_j A_ij * v_j.
inline Value propagate_nodes(Tape& t, Value normalized_affinity, Value nodes) {
  const Matrix& a = t.val(normalized_affinity);
  if (a.rows() != a.cols() || a.cols() != t.val(nodes).rows())
    throw GraphError("propagate_nodes: affinity must be n x n matching n nodes");
  return ad::matmul(t, normalized_affinity, nodes);
}

/// Classifies nodes from their own features concatenated with one round of
/// affinity-weighted neighborhood aggregation.
struct NodeNet {
  nn::Dense l1, l2;
  nn::BatchNorm bn1;

  NodeNet() = default;
  NodeNet(int feature_dim, int n_classes, Rng& rng)
      : l1(2 * feature_dim, feature_dim, rng),
        l2(feature_dim, n_classes, rng, /*gain=*/1.0),
        bn1(feature_dim) {}

  Value logits(Tape& t, Value nodes, Value normalized_affinity, bool train) {
    Value agg = propagate_nodes(t, normalized_affinity, nodes);
    Value h = ad::concat_cols(t, nodes, agg);  // n x 2d
    h = ad::relu(t, bn1(t, l1(t, h), train));
    return l2(t, h);
  }

  void trainable(std::vector<Matrix*>& out) {
    l1.trainable(out);
    l2.trainable(out);
    bn1.trainable(out);
  }
  void named(const std::string& prefix, nn::NamedState& out) {
    l1.named(prefix + ".l1", out);
    l2.named(prefix + ".l2", out);
    bn1.named(prefix + ".bn1", out);
  }
};

/// Supervision pattern for the edge loss: `values` holds the desired edge
/// indicator (1 when both endpoints have the same definitive label), and
/// `mask` marks the pairs that participate in the loss. Pairs touching an
/// undecided node and the diagonal are excluded.
struct TargetAffinity {
  Matrix values;
  ad::BoolArray mask;
};

/// A node's definitive label is its ground-truth label when present;
/// otherwise its prediction, accepted only when confidence strictly exceeds
/// tau; otherwise none.
inline std::vector<std::optional<int>> resolve_node_labels(
    const std::vector<std::optional<int>>& ground_truth,
    const std::vector<int>& predicted, const std::vector<double>& confidence,
    double tau) {
  if (ground_truth.size() != predicted.size() || predicted.size() != confidence.size())
    throw ContractError("resolve_node_labels: input sizes differ");
  std::vector<std::optional<int>> out(ground_truth.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (ground_truth[i]) {
      out[i] = ground_truth[i];
    } else if (confidence[i] > tau) {
      out[i] = predicted[i];
    }
  }
  return out;
}

inline TargetAffinity build_target_affinity(
    const std::vector<std::optional<int>>& definitive_labels) {
  const std::size_t n = definitive_labels.size();
  if (n < 1) throw ContractError("build_target_affinity: empty node list");
  TargetAffinity ta;
  ta.values = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  ta.mask = ad::BoolArray::Constant(static_cast<Eigen::Index>(n),
                                    static_cast<Eigen::Index>(n), false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !definitive_labels[i] || !definitive_labels[j]) continue;
      ta.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = true;
      if (*definitive_labels[i] == *definitive_labels[j])
        ta.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
    }
  return ta;
}

inline TargetAffinity build_target_affinity(
    const std::vector<std::optional<int>>& ground_truth,
    const std::vector<int>& predicted, const std::vector<double>& confidence,
    double tau) {
  return build_target_affinity(
      resolve_node_labels(ground_truth, predicted, confidence, tau));
}

}  // namespace mtda
