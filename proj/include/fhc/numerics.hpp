#pragma once

// Dense kernels used throughout: thin QR with a fixed sign convention,
// top-k symmetric eigenpairs, and SPD solves. All routines are templated on
// the Eigen expression type so fixed-size and dynamic matrices both work.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fhc/error.hpp"

namespace fhc {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Thin QR factors of a tall matrix A (m x n, m >= n): A = Q R with Q m x n
/// having orthonormal columns and R upper triangular with a nonnegative
/// diagonal.
template <typename Scalar>
struct ThinQR {
  DenseMatrix<Scalar> Q;
  DenseMatrix<Scalar> R;
};

/// Householder thin QR. Throws RankDeficient when the smallest |R_ii| falls
/// below 1e-12 times the largest.
template <typename Derived>
ThinQR<typename Derived::Scalar> thin_qr(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  using std::abs;
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  if (n > m) {
    throw Error(ErrorCode::ShapeMismatch, "thin_qr needs rows >= cols, got " +
                                              std::to_string(m) + "x" + std::to_string(n));
  }
  Eigen::HouseholderQR<DenseMatrix<Scalar>> qr(a.derived());
  DenseMatrix<Scalar> r = qr.matrixQR().topRows(n).template triangularView<Eigen::Upper>();
  DenseMatrix<Scalar> q = qr.householderQ() * DenseMatrix<Scalar>::Identity(m, n);

  double largest = 0.0;
  double smallest = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = abs(r(i, i));
    largest = std::max(largest, d);
    smallest = std::min(smallest, d);
  }
  if (!(largest > 0.0) || smallest < 1e-12 * largest) {
    throw Error(ErrorCode::RankDeficient, "numerical rank below " + std::to_string(n));
  }
  // Force a nonnegative R diagonal so the factorization is unique.
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar d = r(i, i);
    const Scalar phase = d / Scalar(abs(d));
    if (phase != Scalar(1)) {
      q.col(i) *= phase;
      r.row(i) *= Eigen::numext::conj(phase);
    }
  }
  return {std::move(q), std::move(r)};
}

/// Maps an unnormalized K x M transformation to the semi-orthogonal matrix
/// with the same row space: W = Q^H where W_tilde^H = Q R.
template <typename Derived>
DenseMatrix<typename Derived::Scalar> qr_orthonormalize(const Eigen::MatrixBase<Derived>& w_tilde) {
  if (w_tilde.rows() > w_tilde.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "qr_orthonormalize needs K <= M");
  }
  return thin_qr(w_tilde.adjoint()).Q.adjoint();
}

template <typename Scalar>
struct TopEigen {
  Eigen::VectorXd values;          // descending
  DenseMatrix<Scalar> vectors;     // one eigenvector per row
};

/// Largest-k eigenpairs of a symmetric (Hermitian) matrix. Each returned
/// eigenvector has its largest-magnitude component made real positive.
template <typename Derived>
TopEigen<typename Derived::Scalar> sym_eig_topk(const Eigen::MatrixBase<Derived>& a, Eigen::Index k) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols() || k < 0 || k > a.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "sym_eig_topk needs square input and k <= M");
  }
  const double scale = std::max(a.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if ((a - a.adjoint()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw Error(ErrorCode::NotSymmetric, "asymmetry exceeds 1e-9 relative");
  }
  Eigen::SelfAdjointEigenSolver<DenseMatrix<Scalar>> solver(a.derived());
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::NonConvergence, "symmetric eigensolver hit its iteration cap");
  }
  const Eigen::Index m = a.rows();
  TopEigen<Scalar> out;
  out.values.resize(k);
  out.vectors.resize(k, m);
  for (Eigen::Index i = 0; i < k; ++i) {
    // Eigen sorts ascending.
    const Eigen::Index src = m - 1 - i;
    out.values(i) = solver.eigenvalues()(src);
    DenseVector<Scalar> v = solver.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    const Scalar phase = v(arg) / Scalar(std::abs(v(arg)));
    v *= Eigen::numext::conj(phase);
    out.vectors.row(i) = v.transpose();
  }
  return out;
}

/// Solves A X = B for positive definite A via Cholesky.
template <typename DerivedA, typename DerivedB>
DenseMatrix<typename DerivedA::Scalar> solve_psd(const Eigen::MatrixBase<DerivedA>& a,
                                                const Eigen::MatrixBase<DerivedB>& b) {
  if (a.rows() != a.cols() || a.rows() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "solve_psd shape mismatch");
  }
  Eigen::LLT<DenseMatrix<typename DerivedA::Scalar>> llt(a.derived());
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, "Cholesky pivot <= 0");
  }
  return llt.solve(b.derived());
}

/// Orthogonal projector onto the row space of X: X^H (X X^H)^{-1} X.
template <typename Derived>
DenseMatrix<typename Derived::Scalar> row_projector(const Eigen::MatrixBase<Derived>& x) {
  DenseMatrix<typename Derived::Scalar> gram = x * x.adjoint();
  return x.adjoint() * solve_psd(gram, x);
}

}  // namespace fhc
