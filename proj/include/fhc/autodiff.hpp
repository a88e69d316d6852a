#pragma once

// Matrix-valued reverse-mode differentiation.
//
// A Tape records every value produced while a function is evaluated. Nodes are
// appended in evaluation order, so the node vector is already a topological
// order and the backward sweep is a single reverse pass over it. Scalars are
// 1x1 matrices.
//
//   ad::Tape tape;
//   auto x = tape.parameter(x0);
//   auto y = ad::sum(ad::hadamard(x, x));
//   tape.backward(y);
//   Eigen::MatrixXd dx = tape.grad(x);

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace fhc::ad {

using Mat = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives and
/// has not been cleared.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Adjoint propagation for one node: receives the node's accumulated output
/// gradient and must call Tape::accumulate for each differentiable parent.
using BackwardFn = std::function<void(Tape&, const Mat& out_grad)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  Var parameter(Mat value);

  /// Adds a node computed from `parents`. Passing an empty BackwardFn marks
  /// the primitive as forward-only; a gradient reaching it throws
  /// UnsupportedPrimitive.
  Var record(Mat value, std::span<const Var> parents, BackwardFn backward);
  Var record(Mat value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
  }

  /// Seeds d(out)/d(out) = 1 and sweeps the tape once in reverse.
  void backward(Var out);

  /// Gradient of the last backward() output with respect to v (zeros if
  /// nothing flowed into v).
  Mat grad(Var v) const;

  void accumulate(Var v, const Mat& g);

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  /// Number of nodes whose backward closure ran in the last sweep.
  std::size_t last_backward_visits() const { return visits_; }
  void clear();

 private:
  struct Node {
    Mat value;
    Mat grad;  // empty until something flows in
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var cdiv(Var a, Var b);  // elementwise a / b
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a + bias * 1^T (bias is a column vector broadcast over columns).
Var add_bias(Var a, Var bias);
Var tanh(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var sum(Var a);
Var squared_norm(Var a);
/// X solving A X = B for positive definite A (Cholesky).
Var solve_psd(Var a, Var b);
/// Semi-orthogonal W = Q^T from a K x M input with W_tilde^T = Q R.
Var qr_orthonormalize(Var w_tilde);
/// Column-batched variant: every column of `flat` holds a K x M matrix in
/// column-major order and is orthonormalized independently.
Var qr_orthonormalize_columns(Var flat, Eigen::Index k, Eigen::Index m);
Var rows(Var a, Eigen::Index start, Eigen::Index count);
Var cols(Var a, Eigen::Index start, Eigen::Index count);
Var vstack(std::span<const Var> parts);
Var hstack(std::span<const Var> parts);
/// Column-major reshape.
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return matmul(a, b); }

/// Backward of the thin-QR Q factor: given A = Q R (A m x n, m >= n) and
/// dL/dQ, returns dL/dA (with dL/dR = 0).
Mat thin_qr_q_backward(const Mat& q, const Mat& r, const Mat& q_bar);

}  // namespace fhc::ad
