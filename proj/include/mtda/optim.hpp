#pragma once

#include <cmath>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "mtda/autodiff.hpp"
#include "mtda/errors.hpp"

namespace mtda {

struct SgdConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double decay = 0.999;  // per-iteration exponential learning-rate decay
};

/// SGD with classical momentum: v <- momentum * v + g, p <- p - lr_k * v,
/// where lr_k = learning_rate * decay^k. One instance is created per training
/// phase, so velocity buffers and the decay schedule start fresh with it.
/// Velocity is keyed by parameter storage address; a parameter appearing in
/// several step() calls for the same iteration shares one buffer.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig cfg) : cfg_(cfg) {
    if (cfg.learning_rate <= 0.0) throw ConfigError("optimizer: learning_rate must be positive");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
      throw ConfigError("optimizer: momentum must be in [0, 1)");
    if (cfg.decay <= 0.0 || cfg.decay > 1.0)
      throw ConfigError("optimizer: decay must be in (0, 1]");
  }

  double learning_rate(int iteration) const {
    return cfg_.learning_rate * std::pow(cfg_.decay, iteration);
  }

  /// Applies one update to the listed parameters using gradients recorded on
  /// the tape. `iteration` indexes the phase-local decay schedule.
  void step(const ad::Tape& tape, const std::vector<ad::Matrix*>& params, int iteration) {
    const double lr = learning_rate(iteration);
    for (ad::Matrix* p : params) {
      const ad::Matrix g = tape.grad_of(*p);
      if (!g.allFinite()) {
        std::ostringstream msg;
        msg << "optimizer: non-finite gradient at iteration " << iteration
            << " for a " << p->rows() << "x" << p->cols() << " parameter";
        throw NumericsError(msg.str());
      }
      ad::Matrix& v = velocity_[p];
      if (v.size() == 0) v = ad::Matrix::Zero(p->rows(), p->cols());
      v = cfg_.momentum * v + g;
      *p -= lr * v;
      if (!p->allFinite()) {
        std::ostringstream msg;
        msg << "optimizer: parameter diverged at iteration " << iteration
            << " (lr " << lr << ")";
        throw NumericsError(msg.str());
      }
    }
  }

  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::unordered_map<const ad::Matrix*, ad::Matrix> velocity_;
};

}  // namespace mtda
