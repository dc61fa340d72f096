#include "mtda/graph.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "oracle.hpp"

namespace ad = mtda::ad;
using ad::Matrix;
using ad::Tape;
using ad::Value;
using oracle::random_matrix;

namespace {

Matrix random_symmetric_unit(mtda::Rng& rng, int n) {
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) a(i, j) = a(j, i) = rng.uniform();
  return a;
}

TEST(EdgeNetTest, ScoresAreSymmetricProbabilities) {
  mtda::Rng rng(1);
  mtda::EdgeNet edge(6, rng);
  Matrix nodes = random_matrix(rng, 5, 6);
  for (const bool train : {true, false}) {
    Tape t;
    const Matrix s = t.val(edge.scores(t, t.constant(nodes), train));
    ASSERT_EQ(s.rows(), 5);
    ASSERT_EQ(s.cols(), 5);
    EXPECT_TRUE(((s.array() > 0.0) && (s.array() < 1.0)).all());
    // Symmetric by construction: pair (i,j) and (j,i) share their input.
    EXPECT_TRUE(oracle::all_close(s, s.transpose(), 0.0, 0.0));
  }
}

TEST(EdgeNetTest, SingleNodeBatchIsRejected) {
  mtda::Rng rng(2);
  mtda::EdgeNet edge(4, rng);
  Tape t;
  EXPECT_THROW(edge.scores(t, t.constant(Matrix::Zero(1, 4)), true), mtda::GraphError);
}

TEST(NormalizeAffinityTest, MatchesBruteForceEntryFormula) {
  mtda::Rng rng(3);
  for (const int n : {2, 5, 9}) {
    const Matrix raw = random_symmetric_unit(rng, n);
    const auto result = mtda::normalize_affinity(raw);
    const Matrix with_loops = raw + Matrix::Identity(n, n);
    for (int i = 0; i < n; ++i) {
      double mi = 0.0;
      for (int j = 0; j < n; ++j) mi += with_loops(i, j);
      EXPECT_NEAR(result.degree(i), mi, 1e-12);
      for (int j = 0; j < n; ++j) {
        double mj = 0.0;
        for (int k = 0; k < n; ++k) mj += with_loops(j, k);
        EXPECT_NEAR(result.normalized(i, j), with_loops(i, j) / std::sqrt(mi * mj), 1e-12);
      }
    }
  }
}

TEST(NormalizeAffinityTest, SymmetricInputsStaySymmetricWithBoundedSpectrum) {
  mtda::Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(15));
    const Matrix raw = random_symmetric_unit(rng, n);
    const Matrix norm = mtda::normalize_affinity(raw).normalized;
    EXPECT_TRUE(oracle::all_close(norm, norm.transpose(), 0.0, 1e-12));
    const Eigen::VectorXd eigs =
        Eigen::SelfAdjointEigenSolver<Matrix>(norm).eigenvalues();
    EXPECT_LE(eigs.cwiseAbs().maxCoeff(), 1.0 + 1e-9);
  }
}

TEST(NormalizeAffinityTest, TapeVariantMatchesPlainVariant) {
  mtda::Rng rng(5);
  const Matrix raw = random_symmetric_unit(rng, 7);
  Tape t;
  const Matrix tape_out = t.val(mtda::normalize_affinity(t, t.constant(raw)));
  const Matrix plain_out = mtda::normalize_affinity(raw).normalized;
  EXPECT_TRUE(oracle::all_close(tape_out, plain_out, 1e-12, 1e-14));
}

TEST(NormalizeAffinityTest, GradientsFlowThroughNormalization) {
  mtda::Rng rng(6);
  Matrix raw = random_symmetric_unit(rng, 4);
  Matrix w = random_matrix(rng, 4, 4);
  oracle::expect_matches_fd({&raw}, [&](Tape& t) {
    Value norm = mtda::normalize_affinity(t, t.param(raw));
    return ad::sum_all(t, ad::mul(t, norm, t.constant(w)));
  });
}

TEST(PropagateNodesTest, MatchesBruteForceLoop) {
  mtda::Rng rng(7);
  for (const int n : {2, 4, 8}) {
    const Matrix raw = random_symmetric_unit(rng, n);
    const Matrix affinity = mtda::normalize_affinity(raw).normalized;
    const Matrix nodes = random_matrix(rng, n, 5);
    Tape t;
    const Matrix got =
        t.val(mtda::propagate_nodes(t, t.constant(affinity), t.constant(nodes)));
    for (int i = 0; i < n; ++i) {
      Eigen::RowVectorXd want = Eigen::RowVectorXd::Zero(5);
      for (int j = 0; j < n; ++j) want += affinity(i, j) * nodes.row(j);
      EXPECT_TRUE(oracle::all_close(got.row(i), want, 1e-6, 1e-12));
    }
  }
}

TEST(PropagateNodesTest, RejectsMismatchedShapes) {
  Tape t;
  Value a = t.constant(Matrix::Identity(3, 3));
  Value nodes = t.constant(Matrix::Zero(4, 2));
  EXPECT_THROW(mtda::propagate_nodes(t, a, nodes), mtda::GraphError);
}

TEST(NodeNetTest, GradientsThroughFullGraphPath) {
  mtda::Rng rng(8);
  const int d = 5, n = 4;
  mtda::EdgeNet edge(d, rng);
  mtda::NodeNet node(d, 3, rng);
  Matrix features = random_matrix(rng, n, d);
  Matrix w = random_matrix(rng, n, 3);
  std::vector<Matrix*> params{&features, &edge.l1.w, &edge.l3.w, &node.l1.w,
                              &node.l2.w, &node.bn1.gamma};
  oracle::expect_matches_fd(params, [&](Tape& t) {
    edge.bn1.running_mean.setZero();
    edge.bn1.running_var.setOnes();
    edge.bn2.running_mean.setZero();
    edge.bn2.running_var.setOnes();
    node.bn1.running_mean.setZero();
    node.bn1.running_var.setOnes();
    Value feats = t.param(features);
    Value scores = edge.scores(t, feats, true);
    Value norm = mtda::normalize_affinity(t, scores);
    Value logits = node.logits(t, feats, norm, true);
    return ad::sum_all(t, ad::mul(t, logits, t.constant(w)));
  });
}

TEST(ResolveNodeLabelsTest, GroundTruthWinsAndThresholdIsStrict) {
  const std::vector<std::optional<int>> gt{2, std::nullopt, std::nullopt, std::nullopt};
  const std::vector<int> pred{0, 1, 1, 2};
  const std::vector<double> conf{0.1, 0.9, 0.7, 0.69};
  const auto resolved = mtda::resolve_node_labels(gt, pred, conf, 0.7);
  ASSERT_TRUE(resolved[0].has_value());
  EXPECT_EQ(*resolved[0], 2);  // ground truth, despite low confidence
  ASSERT_TRUE(resolved[1].has_value());
  EXPECT_EQ(*resolved[1], 1);
  EXPECT_FALSE(resolved[2].has_value());  // exactly tau: not accepted
  EXPECT_FALSE(resolved[3].has_value());
}

TEST(ResolveNodeLabelsTest, ThresholdAtOrAboveOneAcceptsNothing) {
  const std::vector<std::optional<int>> gt(5, std::nullopt);
  const std::vector<int> pred{0, 1, 2, 1, 0};
  const std::vector<double> conf{1.0, 1.0, 0.99, 0.5, 1.0};
  const auto resolved = mtda::resolve_node_labels(gt, pred, conf, 1.0);
  for (const auto& r : resolved) EXPECT_FALSE(r.has_value());
}

TEST(TargetAffinityTest, MatchesBruteForcePairwiseComparisonOnRandomLabelings) {
  mtda::Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(9));
    std::vector<std::optional<int>> labels(static_cast<std::size_t>(n));
    for (auto& l : labels)
      if (rng.uniform() < 0.7) l = static_cast<int>(rng.uniform_int(4));
    const auto ta = mtda::build_target_affinity(labels);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const bool both = labels[static_cast<std::size_t>(i)].has_value() &&
                          labels[static_cast<std::size_t>(j)].has_value();
        const bool expect_mask = i != j && both;
        EXPECT_EQ(ta.mask(i, j), expect_mask);
        const double expect_value =
            expect_mask && *labels[static_cast<std::size_t>(i)] ==
                               *labels[static_cast<std::size_t>(j)]
                ? 1.0
                : 0.0;
        EXPECT_EQ(ta.values(i, j), expect_value);
      }
  }
}

TEST(TargetAffinityTest, EndToEndEdgeSupervisionGradient) {
  // The complete edge-supervision path: node features -> edge scores ->
  // masked binary cross-entropy against the label-agreement pattern.
  mtda::Rng rng(10);
  const int d = 4, n = 5;
  mtda::EdgeNet edge(d, rng);
  Matrix features = random_matrix(rng, n, d);
  const std::vector<std::optional<int>> labels{0, 1, 0, std::nullopt, 1};
  const auto ta = mtda::build_target_affinity(labels);
  oracle::expect_matches_fd({&features, &edge.l1.w, &edge.l2.w, &edge.l3.w},
                            [&](Tape& t) {
                              edge.bn1.running_mean.setZero();
                              edge.bn1.running_var.setOnes();
                              edge.bn2.running_mean.setZero();
                              edge.bn2.running_var.setOnes();
                              Value s = edge.scores(t, t.param(features), true);
                              return ad::masked_bce(t, s, ta.values, ta.mask);
                            });
}

}  // namespace
