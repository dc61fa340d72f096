#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mtda/autodiff.hpp"
#include "mtda/rng.hpp"

namespace mtda::nn {

using ad::Matrix;
using ad::Tape;
using ad::Value;

/// Named views over a layer's persistent matrices, used for checkpointing.
using NamedState = std::vector<std::pair<std::string, Matrix*>>;

inline Matrix normal_init(Rng& rng, int rows, int cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
  return m;
}

/// Fully connected layer, x (n x in) -> x*w + b (n x out). Weights use
/// He initialization scaled by fan-in; biases start at zero.
struct Dense {
  Matrix w;
  Matrix b;

  Dense() = default;
  Dense(int in, int out, Rng& rng, double gain = 2.0)
      : w(normal_init(rng, in, out, std::sqrt(gain / in))), b(Matrix::Zero(1, out)) {}

  Value operator()(Tape& t, Value x) const {
    return ad::add_rowvec(t, ad::matmul(t, x, t.param(w)), t.param(b));
  }

  void trainable(std::vector<Matrix*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
  void named(const std::string& prefix, NamedState& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }
};

/// Batch normalization wrapper owning the affine parameters and running
/// statistics. `group` is the number of columns per channel (1 for dense
/// activations, height*width for conv feature maps).
struct BatchNorm {
  Matrix gamma;
  Matrix beta;
  Matrix running_mean;
  Matrix running_var;
  int channels = 0;
  int group = 1;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(int channels_, int group_ = 1)
      : gamma(Matrix::Ones(1, channels_)),
        beta(Matrix::Zero(1, channels_)),
        running_mean(Matrix::Zero(1, channels_)),
        running_var(Matrix::Ones(1, channels_)),
        channels(channels_),
        group(group_) {}

  // Non-const: training mode updates the running statistics in place.
  Value operator()(Tape& t, Value x, bool train) {
    return ad::batchnorm(t, x, t.param(gamma), t.param(beta), running_mean,
                         running_var, channels, group, train, momentum, eps);
  }

  void trainable(std::vector<Matrix*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void named(const std::string& prefix, NamedState& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
    out.emplace_back(prefix + ".running_mean", &running_mean);
    out.emplace_back(prefix + ".running_var", &running_var);
  }
};

/// Valid 2-D convolution layer over row-flattened channel-major images.
struct Conv2d {
  Matrix w;  // out_channels x (in_channels * kernel * kernel)
  Matrix b;  // 1 x out_channels
  ad::ConvShape shape;

  Conv2d() = default;
  Conv2d(ad::ConvShape s, Rng& rng) : shape(s) {
    const int fan_in = s.in_channels * s.kernel * s.kernel;
    w = normal_init(rng, s.out_channels, fan_in, std::sqrt(2.0 / fan_in));
    b = Matrix::Zero(1, s.out_channels);
  }

  Value operator()(Tape& t, Value x) const {
    return ad::conv2d(t, x, t.param(w), t.param(b), shape);
  }

  void trainable(std::vector<Matrix*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
  void named(const std::string& prefix, NamedState& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }
};

}  // namespace mtda::nn
