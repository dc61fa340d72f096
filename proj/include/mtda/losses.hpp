#pragma once

#include <iostream>
#include <vector>

#include "mtda/autodiff.hpp"
#include "mtda/errors.hpp"
#include "mtda/graph.hpp"

namespace mtda {

/// Loss term weights and the pseudo-label confidence threshold.
struct LossWeights {
  double edge = 1.0;
  double node = 0.3;
  double adversarial = 1.0;
  double confidence_threshold = 0.7;  // strictly-greater acceptance bound

  void validate() const {
    if (edge < 0.0 || node < 0.0 || adversarial < 0.0)
      throw ConfigError("loss weights must be nonnegative");
    if (confidence_threshold < 0.0)
      throw ConfigError("confidence threshold must be nonnegative");
  }
};

/// Supervised cross-entropy over rows with known labels.
inline Value classification_loss(Tape& t, Value logits, const std::vector<int>& labels) {
  return ad::cross_entropy_with_logits(t, logits, labels);
}

/// Edge supervision: masked binary cross-entropy between predicted edge
/// probabilities and the label-agreement pattern. A batch without a single
/// supervised pair contributes zero and emits a warning.
inline Value edge_supervision_loss(Tape& t, Value edge_scores, const TargetAffinity& ta) {
  if (ta.mask.count() == 0)
    std::cerr << "warning: no labeled node pairs in batch; edge loss is zero\n";
  return ad::masked_bce(t, edge_scores, ta.values, ta.mask);
}

/// Domain-adversarial loss: discriminator logits against domain indicators
/// (1 = source domain, 0 = any target domain).
inline Value adversarial_loss(Tape& t, Value disc_logits, const std::vector<bool>& is_source) {
  Matrix targets(static_cast<Eigen::Index>(is_source.size()), 1);
  for (std::size_t i = 0; i < is_source.size(); ++i)
    targets(static_cast<Eigen::Index>(i), 0) = is_source[i] ? 1.0 : 0.0;
  return ad::bce_with_logits(t, disc_logits, targets);
}

}  // namespace mtda
