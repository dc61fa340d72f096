#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mtda/errors.hpp"
#include "mtda/rng.hpp"

namespace mtda::ad {

using Matrix = Eigen::MatrixXd;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Handle to a node on a Tape. Cheap to copy; only meaningful together with
/// the tape that produced it.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over double matrices.
///
/// Usage contract:
///  - build the forward computation once per iteration,
///  - call zero_grad() before every backward() (gradients accumulate),
///  - read parameter gradients through grad_of() keyed by the parameter's
///    storage address, then discard the tape.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  /// Leaf that never receives gradients (data batches, constants).
  Value constant(Matrix v) { return push(std::move(v), false, nullptr); }

  /// Leaf that receives gradients but is not tied to external storage.
  Value leaf(Matrix v) { return push(std::move(v), true, nullptr); }

  /// Leaf bound to external parameter storage. Binding the same matrix twice
  /// returns the same node, so shared weights accumulate correctly.
  Value param(const Matrix& storage) {
    auto it = bound_.find(&storage);
    if (it != bound_.end()) return Value{it->second};
    Value v = push(storage, true, nullptr);
    bound_.emplace(&storage, v.id);
    return v;
  }

  const Matrix& val(Value v) const { return node(v.id).value; }

  /// Gradient of the last backward pass w.r.t. a bound parameter; zeros if
  /// the parameter was never touched.
  Matrix grad_of(const Matrix& storage) const {
    auto it = bound_.find(&storage);
    if (it == bound_.end()) return Matrix::Zero(storage.rows(), storage.cols());
    const Node& n = node(it->second);
    if (n.grad.size() == 0) return Matrix::Zero(storage.rows(), storage.cols());
    return n.grad;
  }

  /// Gradient buffer of any node (allocated zeros on first access).
  Matrix& grad_buffer(int id) {
    Node& n = node(id);
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool needs_grad(Value v) const { return node(v.id).requires_grad; }

  /// Accumulates into a node's gradient; silently skipped for nodes that do
  /// not require gradients so op code can stay unconditional.
  template <typename Expr>
  void add_grad(int id, const Expr& g) {
    Node& n = node(id);
    if (!n.requires_grad) return;
    grad_buffer(id) += g;
  }

  /// Backpropagates from a scalar node. Assumes grad buffers are zero; call
  /// zero_grad() between passes on the same tape.
  void backward(Value root) {
    const Matrix& r = val(root);
    if (r.rows() != 1 || r.cols() != 1) {
      throw ContractError("backward: root must be a 1x1 scalar node");
    }
    if (!node(root.id).requires_grad) return;
    grad_buffer(root.id)(0, 0) += 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.size() == 0 || !n.back) continue;
      n.back(*this, i);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad.resize(0, 0);
  }

  /// Creates an interior node. requires_grad is inherited from parents.
  Value make(Matrix value, std::initializer_list<Value> parents, BackFn back) {
    bool rg = false;
    for (Value p : parents) rg = rg || node(p.id).requires_grad;
    return push(std::move(value), rg, rg ? std::move(back) : nullptr);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackFn back;
    bool requires_grad = false;
  };

  Value push(Matrix v, bool rg, BackFn back) {
    if (!v.allFinite()) throw NumericsError("tape node created with non-finite values");
    nodes_.push_back(Node{std::move(v), Matrix(), std::move(back), rg});
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, int> bound_;
};

namespace detail {
inline void expect(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}
inline void same_shape(const Matrix& a, const Matrix& b, const char* op) {
  expect(a.rows() == b.rows() && a.cols() == b.cols(),
         std::string(op) + ": operand shapes differ");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops
// ---------------------------------------------------------------------------

inline Value add(Tape& t, Value a, Value b) {
  detail::same_shape(t.val(a), t.val(b), "add");
  Matrix out = t.val(a) + t.val(b);
  return t.make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    t.add_grad(a.id, g);
    t.add_grad(b.id, g);
  });
}

/// Adds a 1 x C row vector to every row of an n x C matrix (bias add).
inline Value add_rowvec(Tape& t, Value a, Value b) {
  detail::expect(t.val(b).rows() == 1 && t.val(b).cols() == t.val(a).cols(),
                 "add_rowvec: bias must be 1 x cols(a)");
  Matrix out = t.val(a).rowwise() + t.val(b).row(0);
  return t.make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    t.add_grad(a.id, g);
    t.add_grad(b.id, g.colwise().sum());
  });
}

inline Value sub(Tape& t, Value a, Value b) {
  detail::same_shape(t.val(a), t.val(b), "sub");
  Matrix out = t.val(a) - t.val(b);
  return t.make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    t.add_grad(a.id, g);
    t.add_grad(b.id, -g);
  });
}

inline Value scale(Tape& t, Value a, double s) {
  Matrix out = s * t.val(a);
  return t.make(std::move(out), {a}, [a, s](Tape& t, int self) {
    t.add_grad(a.id, s * t.grad_buffer(self));
  });
}

/// Elementwise (Hadamard) product.
inline Value mul(Tape& t, Value a, Value b) {
  detail::same_shape(t.val(a), t.val(b), "mul");
  Matrix out = t.val(a).cwiseProduct(t.val(b));
  return t.make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    t.add_grad(a.id, g.cwiseProduct(t.val(b)));
    t.add_grad(b.id, g.cwiseProduct(t.val(a)));
  });
}

/// Scales row i of a by c(i): out(i,j) = a(i,j) * c(i,0).
inline Value mul_colvec(Tape& t, Value a, Value c) {
  detail::expect(t.val(c).cols() == 1 && t.val(c).rows() == t.val(a).rows(),
                 "mul_colvec: c must be rows(a) x 1");
  Matrix out = t.val(a).array().colwise() * t.val(c).col(0).array();
  return t.make(std::move(out), {a, c}, [a, c](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    t.add_grad(a.id, (g.array().colwise() * t.val(c).col(0).array()).matrix());
    t.add_grad(c.id, g.cwiseProduct(t.val(a)).rowwise().sum());
  });
}

/// Scales column j of a by r(j): out(i,j) = a(i,j) * r(0,j).
inline Value mul_rowvec(Tape& t, Value a, Value r) {
  detail::expect(t.val(r).rows() == 1 && t.val(r).cols() == t.val(a).cols(),
                 "mul_rowvec: r must be 1 x cols(a)");
  Matrix out = t.val(a).array().rowwise() * t.val(r).row(0).array();
  return t.make(std::move(out), {a, r}, [a, r](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    t.add_grad(a.id, (g.array().rowwise() * t.val(r).row(0).array()).matrix());
    t.add_grad(r.id, g.cwiseProduct(t.val(a)).colwise().sum());
  });
}

inline Value matmul(Tape& t, Value a, Value b) {
  detail::expect(t.val(a).cols() == t.val(b).rows(), "matmul: inner dims differ");
  Matrix out = t.val(a) * t.val(b);
  return t.make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    t.add_grad(a.id, g * t.val(b).transpose());
    t.add_grad(b.id, t.val(a).transpose() * g);
  });
}

inline Value relu(Tape& t, Value a) {
  Matrix out = t.val(a).cwiseMax(0.0);
  return t.make(std::move(out), {a}, [a](Tape& t, int self) {
    const Matrix mask = (t.val(a).array() > 0.0).cast<double>();
    t.add_grad(a.id, t.grad_buffer(self).cwiseProduct(mask));
  });
}

inline Value sigmoid(Tape& t, Value a) {
  Matrix out = (1.0 / (1.0 + (-t.val(a).array()).exp())).matrix();
  return t.make(std::move(out), {a}, [a](Tape& t, int self) {
    const Matrix& s = t.val(Value{self});
    const Matrix ds = s.array() * (1.0 - s.array());
    t.add_grad(a.id, t.grad_buffer(self).cwiseProduct(ds));
  });
}

/// Natural log; caller guarantees strictly positive inputs.
inline Value lognat(Tape& t, Value a) {
  detail::expect((t.val(a).array() > 0.0).all(), "lognat: inputs must be positive");
  Matrix out = t.val(a).array().log();
  return t.make(std::move(out), {a}, [a](Tape& t, int self) {
    t.add_grad(a.id, t.grad_buffer(self).cwiseQuotient(t.val(a)));
  });
}

inline Value clampv(Tape& t, Value a, double lo, double hi) {
  Matrix out = t.val(a).array().min(hi).max(lo);
  return t.make(std::move(out), {a}, [a, lo, hi](Tape& t, int self) {
    const auto in = t.val(a).array();
    const Matrix mask = (in >= lo && in <= hi).cast<double>();
    t.add_grad(a.id, t.grad_buffer(self).cwiseProduct(mask));
  });
}

/// Elementwise power with constant exponent; inputs must be positive unless
/// the exponent is a nonnegative integer.
inline Value pow_scalar(Tape& t, Value a, double e) {
  const bool int_exp = e == std::floor(e) && e >= 0.0;
  detail::expect(int_exp || (t.val(a).array() > 0.0).all(),
                 "pow_scalar: fractional powers need positive inputs");
  Matrix out = t.val(a).array().pow(e);
  return t.make(std::move(out), {a}, [a, e](Tape& t, int self) {
    const Matrix d = e * t.val(a).array().pow(e - 1.0);
    t.add_grad(a.id, t.grad_buffer(self).cwiseProduct(d));
  });
}

inline Value softmax_rows(Tape& t, Value a) {
  Matrix z = t.val(a);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    z.row(i).array() -= z.row(i).maxCoeff();
    z.row(i) = z.row(i).array().exp();
    z.row(i) /= z.row(i).sum();
  }
  return t.make(std::move(z), {a}, [a](Tape& t, int self) {
    const Matrix& p = t.val(Value{self});
    const Matrix& g = t.grad_buffer(self);
    const Eigen::VectorXd dot = g.cwiseProduct(p).rowwise().sum();
    Matrix ga = p.cwiseProduct(g - dot.replicate(1, g.cols()));
    t.add_grad(a.id, ga);
  });
}

inline Value sum_all(Tape& t, Value a) {
  Matrix out(1, 1);
  out(0, 0) = t.val(a).sum();
  return t.make(std::move(out), {a}, [a](Tape& t, int self) {
    const double g = t.grad_buffer(self)(0, 0);
    t.add_grad(a.id, Matrix::Constant(t.val(a).rows(), t.val(a).cols(), g));
  });
}

inline Value mean_all(Tape& t, Value a) {
  detail::expect(t.val(a).size() > 0, "mean_all: empty matrix");
  Matrix out(1, 1);
  out(0, 0) = t.val(a).mean();
  return t.make(std::move(out), {a}, [a](Tape& t, int self) {
    const double g = t.grad_buffer(self)(0, 0) / static_cast<double>(t.val(a).size());
    t.add_grad(a.id, Matrix::Constant(t.val(a).rows(), t.val(a).cols(), g));
  });
}

/// Per-row sums as an n x 1 column.
inline Value row_sum(Tape& t, Value a) {
  Matrix out = t.val(a).rowwise().sum();
  return t.make(std::move(out), {a}, [a](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    t.add_grad(a.id, g.replicate(1, t.val(a).cols()));
  });
}

/// View of a rectangular block; gradients scatter back into place.
inline Value block(Tape& t, Value a, int r0, int c0, int rows, int cols) {
  const Matrix& v = t.val(a);
  detail::expect(r0 >= 0 && c0 >= 0 && rows >= 1 && cols >= 1 &&
                     r0 + rows <= v.rows() && c0 + cols <= v.cols(),
                 "block: range out of bounds");
  Matrix out = v.block(r0, c0, rows, cols);
  return t.make(std::move(out), {a}, [a, r0, c0, rows, cols](Tape& t, int self) {
    if (!t.needs_grad(a)) return;
    t.grad_buffer(a.id).block(r0, c0, rows, cols) += t.grad_buffer(self);
  });
}

/// Horizontal concatenation [a b].
inline Value concat_cols(Tape& t, Value a, Value b) {
  detail::expect(t.val(a).rows() == t.val(b).rows(), "concat_cols: row counts differ");
  Matrix out(t.val(a).rows(), t.val(a).cols() + t.val(b).cols());
  out << t.val(a), t.val(b);
  return t.make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    const Eigen::Index ca = t.val(a).cols();
    t.add_grad(a.id, g.leftCols(ca));
    t.add_grad(b.id, g.rightCols(g.cols() - ca));
  });
}

/// Reshapes with row-major element order (Eigen's default storage is
/// column-major, so this is an explicit copy, not a view).
inline Value reshape_rowmajor(Tape& t, Value a, int rows, int cols) {
  const Matrix& v = t.val(a);
  detail::expect(v.size() == static_cast<Eigen::Index>(rows) * cols,
                 "reshape_rowmajor: element count mismatch");
  Matrix out(rows, cols);
  {
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        out(k / cols, k % cols) = v(i, j);
        ++k;
      }
  }
  return t.make(std::move(out), {a}, [a](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    if (!t.needs_grad(a)) return;
    Matrix& ga = t.grad_buffer(a.id);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < ga.rows(); ++i)
      for (Eigen::Index j = 0; j < ga.cols(); ++j) {
        ga(i, j) += g(k / g.cols(), k % g.cols());
        ++k;
      }
  });
}

/// Gradient reversal: identity forward, -coefficient * upstream backward.
inline Value gradient_reversal(Tape& t, Value a, double coefficient) {
  Matrix out = t.val(a);
  return t.make(std::move(out), {a}, [a, coefficient](Tape& t, int self) {
    t.add_grad(a.id, -coefficient * t.grad_buffer(self));
  });
}

/// Row-wise outer product, flattened: given p (n x K) and f (n x D), produces
/// n x (K*D) where out(i, k*D + d) = p(i,k) * f(i,d).
inline Value outer_rows(Tape& t, Value p, Value f) {
  const Matrix& P = t.val(p);
  const Matrix& F = t.val(f);
  detail::expect(P.rows() == F.rows(), "outer_rows: row counts differ");
  const Eigen::Index n = P.rows(), K = P.cols(), D = F.cols();
  Matrix out(n, K * D);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < K; ++k)
      out.row(i).segment(k * D, D) = P(i, k) * F.row(i);
  return t.make(std::move(out), {p, f}, [p, f](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& P = t.val(p);
    const Matrix& F = t.val(f);
    const Eigen::Index n = P.rows(), K = P.cols(), D = F.cols();
    Matrix gp = Matrix::Zero(n, K);
    Matrix gf = Matrix::Zero(n, D);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < K; ++k) {
        const auto gseg = g.row(i).segment(k * D, D);
        gp(i, k) = gseg.dot(F.row(i));
        gf.row(i) += P(i, k) * gseg;
      }
    t.add_grad(p.id, gp);
    t.add_grad(f.id, gf);
  });
}

/// All ordered pairs of row differences, absolute value: given v (n x d),
/// produces n^2 x d where row i*n + j holds |v_i - v_j|.
inline Value pairwise_absdiff(Tape& t, Value v) {
  const Matrix& V = t.val(v);
  const Eigen::Index n = V.rows(), d = V.cols();
  Matrix out(n * n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      out.row(i * n + j) = (V.row(i) - V.row(j)).cwiseAbs();
  return t.make(std::move(out), {v}, [v](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& V = t.val(v);
    const Eigen::Index n = V.rows();
    Matrix gv = Matrix::Zero(n, V.cols());
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto diff = (V.row(i) - V.row(j)).array();
        const Eigen::RowVectorXd s =
            ((diff > 0.0).cast<double>() - (diff < 0.0).cast<double>()).matrix();
        const auto grow = g.row(i * n + j).cwiseProduct(s);
        gv.row(i) += grow;
        gv.row(j) -= grow;
      }
    t.add_grad(v.id, gv);
  });
}

// ---------------------------------------------------------------------------
// Fused losses
// ---------------------------------------------------------------------------

/// Mean cross-entropy of row-wise logits against integer class labels,
/// computed with the log-sum-exp shift.
inline Value cross_entropy_with_logits(Tape& t, Value logits,
                                       const std::vector<int>& labels) {
  const Matrix& z = t.val(logits);
  detail::expect(z.rows() == static_cast<Eigen::Index>(labels.size()),
                 "cross_entropy_with_logits: one label per row required");
  detail::expect(z.rows() > 0, "cross_entropy_with_logits: empty batch");
  const Eigen::Index n = z.rows(), c = z.cols();
  Matrix p(n, c);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    detail::expect(labels[static_cast<std::size_t>(i)] >= 0 &&
                       labels[static_cast<std::size_t>(i)] < c,
                   "cross_entropy_with_logits: label out of range");
    const double m = z.row(i).maxCoeff();
    const Eigen::RowVectorXd sh = z.row(i).array() - m;
    const double lse = std::log(sh.array().exp().sum());
    p.row(i) = (sh.array() - lse).exp();
    loss += lse - sh(labels[static_cast<std::size_t>(i)]);
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(n);
  return t.make(std::move(out), {logits},
                [logits, labels, p = std::move(p)](Tape& t, int self) {
                  const double g = t.grad_buffer(self)(0, 0);
                  Matrix gz = p;
                  for (Eigen::Index i = 0; i < gz.rows(); ++i)
                    gz(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
                  gz *= g / static_cast<double>(gz.rows());
                  t.add_grad(logits.id, gz);
                });
}

/// Mean binary cross-entropy over the unmasked entries of a probability
/// matrix. Probabilities are clamped to [eps, 1-eps] inside the op; clamped
/// entries receive zero gradient. A fully masked input yields a constant 0.
inline Value masked_bce(Tape& t, Value probs, const Matrix& targets,
                        const BoolArray& mask, double eps = 1e-7) {
  const Matrix& p = t.val(probs);
  detail::expect(p.rows() == targets.rows() && p.cols() == targets.cols(),
                 "masked_bce: probs/targets shapes differ");
  detail::expect(p.rows() == mask.rows() && p.cols() == mask.cols(),
                 "masked_bce: probs/mask shapes differ");
  detail::expect(((targets.array() == 0.0) || (targets.array() == 1.0)).all(),
                 "masked_bce: targets must be 0 or 1");
  const std::ptrdiff_t count = mask.count();
  Matrix out(1, 1);
  if (count == 0) {
    out(0, 0) = 0.0;
    return t.make(std::move(out), {probs}, [](Tape&, int) {});
  }
  double loss = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (!mask(i, j)) continue;
      const double q = std::min(std::max(p(i, j), eps), 1.0 - eps);
      loss -= targets(i, j) * std::log(q) + (1.0 - targets(i, j)) * std::log(1.0 - q);
    }
  out(0, 0) = loss / static_cast<double>(count);
  return t.make(
      std::move(out), {probs},
      [probs, targets, mask, eps, count](Tape& t, int self) {
        const double g = t.grad_buffer(self)(0, 0) / static_cast<double>(count);
        const Matrix& p = t.val(probs);
        Matrix gp = Matrix::Zero(p.rows(), p.cols());
        for (Eigen::Index i = 0; i < p.rows(); ++i)
          for (Eigen::Index j = 0; j < p.cols(); ++j) {
            if (!mask(i, j)) continue;
            if (p(i, j) < eps || p(i, j) > 1.0 - eps) continue;  // clamped: no grad
            const double q = p(i, j);
            gp(i, j) = g * (-targets(i, j) / q + (1.0 - targets(i, j)) / (1.0 - q));
          }
        t.add_grad(probs.id, gp);
      });
}

/// Mean binary cross-entropy of n x 1 logits against 0/1 targets, using the
/// numerically stable max(z,0) - z*y + log(1 + exp(-|z|)) form.
inline Value bce_with_logits(Tape& t, Value logits, const Matrix& targets) {
  const Matrix& z = t.val(logits);
  detail::expect(z.cols() == 1 && targets.cols() == 1 && z.rows() == targets.rows(),
                 "bce_with_logits: logits/targets must be n x 1");
  detail::expect(z.rows() > 0, "bce_with_logits: empty batch");
  detail::expect(((targets.array() == 0.0) || (targets.array() == 1.0)).all(),
                 "bce_with_logits: targets must be 0 or 1");
  const auto za = z.col(0).array();
  const auto ya = targets.col(0).array();
  const double loss =
      (za.max(0.0) - za * ya + (1.0 + (-za.abs()).exp()).log()).mean();
  Matrix out(1, 1);
  out(0, 0) = loss;
  return t.make(std::move(out), {logits}, [logits, targets](Tape& t, int self) {
    const Matrix& z = t.val(logits);
    const double g = t.grad_buffer(self)(0, 0) / static_cast<double>(z.rows());
    const Matrix s = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    t.add_grad(logits.id, g * (s - targets));
  });
}

// ---------------------------------------------------------------------------
// Structured layers: batch norm, dropout, convolution, pooling
// ---------------------------------------------------------------------------

/// Batch normalization over a B x (C*G) activation where channel c occupies
/// the contiguous column range [c*G, (c+1)*G). Dense activations use G = 1;
/// conv feature maps use G = H*W. In training mode batch statistics are used
/// and running statistics (1 x C each) are updated in place; in eval mode the
/// running statistics are used and the op is affine-linear.
inline Value batchnorm(Tape& t, Value x, Value gamma, Value beta,
                       Matrix& running_mean, Matrix& running_var, int channels,
                       int group, bool train, double momentum = 0.1,
                       double eps = 1e-5) {
  const Matrix& v = t.val(x);
  detail::expect(group >= 1 && channels >= 1 &&
                     v.cols() == static_cast<Eigen::Index>(channels) * group,
                 "batchnorm: cols(x) must equal channels * group");
  detail::expect(t.val(gamma).rows() == 1 && t.val(gamma).cols() == channels,
                 "batchnorm: gamma must be 1 x channels");
  detail::expect(t.val(beta).rows() == 1 && t.val(beta).cols() == channels,
                 "batchnorm: beta must be 1 x channels");
  detail::expect(running_mean.cols() == channels && running_var.cols() == channels,
                 "batchnorm: running stats must be 1 x channels");
  const Eigen::Index rows = v.rows();
  detail::expect(!train || rows * group >= 2,
                 "batchnorm: training mode needs at least 2 entries per channel");

  Matrix xhat(rows, v.cols());
  Matrix out(rows, v.cols());
  Eigen::RowVectorXd ivar(channels);
  for (int c = 0; c < channels; ++c) {
    const auto Xc = v.middleCols(static_cast<Eigen::Index>(c) * group, group);
    double mu, var;
    if (train) {
      mu = Xc.mean();
      var = (Xc.array() - mu).square().mean();
      running_mean(0, c) = (1.0 - momentum) * running_mean(0, c) + momentum * mu;
      running_var(0, c) = (1.0 - momentum) * running_var(0, c) + momentum * var;
    } else {
      mu = running_mean(0, c);
      var = running_var(0, c);
    }
    ivar(c) = 1.0 / std::sqrt(var + eps);
    xhat.middleCols(static_cast<Eigen::Index>(c) * group, group) =
        (Xc.array() - mu) * ivar(c);
    out.middleCols(static_cast<Eigen::Index>(c) * group, group) =
        xhat.middleCols(static_cast<Eigen::Index>(c) * group, group).array() *
            t.val(gamma)(0, c) +
        t.val(beta)(0, c);
  }

  return t.make(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), ivar = std::move(ivar), channels,
       group, train](Tape& t, int self) {
        const Matrix& g = t.grad_buffer(self);
        const Matrix& gam = t.val(gamma);
        const Eigen::Index rows = g.rows();
        const double m = static_cast<double>(rows * group);
        Matrix gx(rows, g.cols());
        Matrix ggamma = Matrix::Zero(1, channels);
        Matrix gbeta = Matrix::Zero(1, channels);
        for (int c = 0; c < channels; ++c) {
          const Eigen::Index c0 = static_cast<Eigen::Index>(c) * group;
          const auto Gc = g.middleCols(c0, group);
          const auto Hc = xhat.middleCols(c0, group);
          ggamma(0, c) = Gc.cwiseProduct(Hc).sum();
          gbeta(0, c) = Gc.sum();
          if (train) {
            // Standard train-mode backward through the batch statistics.
            const Matrix dxhat = Gc * gam(0, c);
            const double sum_dxhat = dxhat.sum();
            const double sum_dxhat_xhat = dxhat.cwiseProduct(Hc).sum();
            gx.middleCols(c0, group) =
                (ivar(c) / m) *
                (m * dxhat.array() - sum_dxhat - Hc.array() * sum_dxhat_xhat);
          } else {
            gx.middleCols(c0, group) = Gc.array() * gam(0, c) * ivar(c);
          }
        }
        t.add_grad(x.id, gx);
        t.add_grad(gamma.id, ggamma);
        t.add_grad(beta.id, gbeta);
      });
}

/// Inverted dropout. In eval mode (or rate 0) the input value is returned
/// unchanged without creating a node. Mask draws come from `rng` one uniform
/// per entry, so the draw count is shape-dependent only.
inline Value dropout(Tape& t, Value x, double rate, bool train, Rng& rng) {
  detail::expect(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  const Matrix& v = t.val(x);
  Matrix mask(v.rows(), v.cols());
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      mask(i, j) = rng.uniform() >= rate ? 1.0 / keep : 0.0;
  Matrix out = v.cwiseProduct(mask);
  return t.make(std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, int self) {
    t.add_grad(x.id, t.grad_buffer(self).cwiseProduct(mask));
  });
}

/// Spatial shape bookkeeping for conv/pool ops over row-flattened images.
/// Rows are samples; a sample is laid out channel-major: index
/// c*height*width + y*width + x.
struct ConvShape {
  int in_channels = 1;
  int height = 0;
  int width = 0;
  int out_channels = 1;
  int kernel = 1;

  int out_height() const { return height - kernel + 1; }
  int out_width() const { return width - kernel + 1; }
};

/// Valid (no padding, stride 1) 2-D convolution via im2col. Weight layout is
/// out_channels x (in_channels * kernel * kernel); bias is 1 x out_channels.
inline Value conv2d(Tape& t, Value x, Value w, Value b, const ConvShape& s) {
  const Matrix& v = t.val(x);
  const Eigen::Index batch = v.rows();
  const int oh = s.out_height(), ow = s.out_width();
  detail::expect(oh >= 1 && ow >= 1, "conv2d: kernel larger than input");
  const int patch = s.in_channels * s.kernel * s.kernel;
  detail::expect(v.cols() == static_cast<Eigen::Index>(s.in_channels) * s.height * s.width,
                 "conv2d: cols(x) must equal in_channels * height * width");
  detail::expect(t.val(w).rows() == s.out_channels && t.val(w).cols() == patch,
                 "conv2d: weight must be out_channels x (in_channels*k*k)");
  detail::expect(t.val(b).rows() == 1 && t.val(b).cols() == s.out_channels,
                 "conv2d: bias must be 1 x out_channels");

  // Gather map: output position p, patch slot q -> input flat index.
  std::vector<int> gather(static_cast<std::size_t>(oh) * ow * patch);
  {
    std::size_t idx = 0;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int c = 0; c < s.in_channels; ++c)
          for (int ky = 0; ky < s.kernel; ++ky)
            for (int kx = 0; kx < s.kernel; ++kx)
              gather[idx++] = c * s.height * s.width + (oy + ky) * s.width + (ox + kx);
  }

  const Matrix& W = t.val(w);
  const Matrix& B = t.val(b);
  Matrix out(batch, static_cast<Eigen::Index>(s.out_channels) * oh * ow);
  Matrix col(static_cast<Eigen::Index>(oh) * ow, patch);
  for (Eigen::Index n = 0; n < batch; ++n) {
    for (Eigen::Index p = 0; p < col.rows(); ++p)
      for (int q = 0; q < patch; ++q)
        col(p, q) = v(n, gather[static_cast<std::size_t>(p) * patch + q]);
    const Matrix res = col * W.transpose();  // (oh*ow) x out_channels
    for (int c = 0; c < s.out_channels; ++c)
      for (Eigen::Index p = 0; p < col.rows(); ++p)
        out(n, static_cast<Eigen::Index>(c) * oh * ow + p) = res(p, c) + B(0, c);
  }

  return t.make(
      std::move(out), {x, w, b},
      [x, w, b, s, gather = std::move(gather), patch, oh, ow](Tape& t, int self) {
        const Matrix& g = t.grad_buffer(self);
        const Matrix& v = t.val(x);
        const Matrix& W = t.val(w);
        const Eigen::Index batch = v.rows();
        Matrix gx = Matrix::Zero(v.rows(), v.cols());
        Matrix gw = Matrix::Zero(W.rows(), W.cols());
        Matrix gb = Matrix::Zero(1, s.out_channels);
        Matrix col(static_cast<Eigen::Index>(oh) * ow, patch);
        Matrix gres(static_cast<Eigen::Index>(oh) * ow, s.out_channels);
        for (Eigen::Index n = 0; n < batch; ++n) {
          for (Eigen::Index p = 0; p < col.rows(); ++p)
            for (int q = 0; q < patch; ++q)
              col(p, q) = v(n, gather[static_cast<std::size_t>(p) * patch + q]);
          for (int c = 0; c < s.out_channels; ++c)
            for (Eigen::Index p = 0; p < col.rows(); ++p)
              gres(p, c) = g(n, static_cast<Eigen::Index>(c) * oh * ow + p);
          gw += gres.transpose() * col;
          gb += gres.colwise().sum();
          const Matrix gcol = gres * W;  // (oh*ow) x patch
          for (Eigen::Index p = 0; p < col.rows(); ++p)
            for (int q = 0; q < patch; ++q)
              gx(n, gather[static_cast<std::size_t>(p) * patch + q]) += gcol(p, q);
        }
        t.add_grad(x.id, gx);
        t.add_grad(w.id, gw);
        t.add_grad(b.id, gb);
      });
}

/// Pooling geometry for non-overlapping max pooling (kernel == stride).
struct PoolShape {
  int channels = 1;
  int height = 0;
  int width = 0;
  int kernel = 2;

  int out_height() const { return height / kernel; }
  int out_width() const { return width / kernel; }
};

inline Value maxpool2d(Tape& t, Value x, const PoolShape& s) {
  const Matrix& v = t.val(x);
  const int oh = s.out_height(), ow = s.out_width();
  detail::expect(oh >= 1 && ow >= 1, "maxpool2d: input smaller than kernel");
  detail::expect(v.cols() == static_cast<Eigen::Index>(s.channels) * s.height * s.width,
                 "maxpool2d: cols(x) must equal channels * height * width");
  const Eigen::Index batch = v.rows();
  const Eigen::Index out_cols = static_cast<Eigen::Index>(s.channels) * oh * ow;
  Matrix out(batch, out_cols);
  // Flat input index of each output entry's argmax, for the backward scatter.
  std::vector<int> arg(static_cast<std::size_t>(batch) * out_cols);
  for (Eigen::Index n = 0; n < batch; ++n) {
    Eigen::Index o = 0;
    for (int c = 0; c < s.channels; ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          int best_idx = -1;
          for (int ky = 0; ky < s.kernel; ++ky)
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int idx = c * s.height * s.width +
                              (oy * s.kernel + ky) * s.width + (ox * s.kernel + kx);
              if (v(n, idx) > best) {
                best = v(n, idx);
                best_idx = idx;
              }
            }
          out(n, o) = best;
          arg[static_cast<std::size_t>(n) * out_cols + o] = best_idx;
          ++o;
        }
  }
  return t.make(std::move(out), {x},
                [x, arg = std::move(arg), out_cols](Tape& t, int self) {
                  const Matrix& g = t.grad_buffer(self);
                  if (!t.needs_grad(x)) return;
                  Matrix& gx = t.grad_buffer(x.id);
                  for (Eigen::Index n = 0; n < g.rows(); ++n)
                    for (Eigen::Index o = 0; o < out_cols; ++o)
                      gx(n, arg[static_cast<std::size_t>(n) * out_cols + o]) += g(n, o);
                });
}

}  // namespace mtda::ad
