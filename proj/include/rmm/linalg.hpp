// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace rmm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class SvdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thin SVD with a fixed sign per singular pair and numerical rank.
///
/// Every pair (u_j, v_j) is flipped so that the entry of largest magnitude in
/// v_j is positive (first such index wins a tie).
struct CanonicalSvd {
  Matrix u;            // rows x k
  Vector singular;     // k, non-increasing
  Matrix v;            // cols x k
  Index rank = 0;      // count of singular values above the numerical zero threshold
};

namespace detail {

inline Index argmax_abs(const Eigen::Ref<const Vector>& x) {
  Index best = 0;
  double best_val = -1.0;
  for (Index i = 0; i < x.size(); ++i) {
    double a = std::abs(x(i));
    if (a > best_val) {
      best_val = a;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

/// Flips the sign of `v` (and `u`, if given) so the largest-magnitude entry of v is positive.
inline void canonicalize_sign(Eigen::Ref<Vector> v, Vector* u = nullptr) {
  if (v.size() == 0) return;
  if (v(detail::argmax_abs(v)) < 0.0) {
    v = -v;
    if (u != nullptr) *u = -*u;
  }
}

/// Threshold below which singular values count as zero.
inline double zero_singular_threshold(double sigma_max, Index rows, Index cols) {
  return sigma_max * static_cast<double>(std::max(rows, cols)) *
         std::numeric_limits<double>::epsilon();
}

inline CanonicalSvd canonical_svd(const Matrix& x) {
  CanonicalSvd out;
  const Index k = std::min(x.rows(), x.cols());
  if (k == 0) {
    out.u.resize(x.rows(), 0);
    out.v.resize(x.cols(), 0);
    out.singular.resize(0);
    return out;
  }
  if (!x.allFinite()) throw SvdError("SVD input contains non-finite values");

  // Jacobi is exact to working precision and fast at the task-vector sizes; the
  // divide-and-conquer path only takes over for the large per-layer deltas.
  if (k <= 64) {
    Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw SvdError("SVD did not converge");
    out.u = svd.matrixU();
    out.v = svd.matrixV();
    out.singular = svd.singularValues();
  } else {
    Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw SvdError("SVD did not converge");
    out.u = svd.matrixU();
    out.v = svd.matrixV();
    out.singular = svd.singularValues();
  }
  if (!out.singular.allFinite()) throw SvdError("SVD produced non-finite singular values");

  const double tol = zero_singular_threshold(out.singular(0), x.rows(), x.cols());
  out.rank = 0;
  while (out.rank < k && out.singular(out.rank) > tol) ++out.rank;

  for (Index j = 0; j < k; ++j) {
    Vector u = out.u.col(j);
    Vector v = out.v.col(j);
    canonicalize_sign(v, &u);
    out.u.col(j) = u;
    out.v.col(j) = v;
  }
  return out;
}

/// Extends the orthonormal columns of `basis` to `target` columns by
/// Gram-Schmidt against e_0, e_1, ... in index order. Added columns follow the
/// same sign convention as singular vectors.
inline Matrix complete_orthonormal(const Matrix& basis, Index target) {
  const Index dim = basis.rows();
  if (target > dim) throw std::invalid_argument("cannot complete beyond the ambient dimension");
  Matrix out(dim, target);
  Index have = std::min(basis.cols(), target);
  out.leftCols(have) = basis.leftCols(have);
  // Residuals only shrink as the span grows, so this threshold always leaves
  // enough unscanned candidates: sum of squared residuals is dim - have.
  const double accept = 0.5 / std::sqrt(static_cast<double>(std::max<Index>(dim, 1)));
  for (Index e = 0; e < dim && have < target; ++e) {
    Vector cand = Vector::Unit(dim, e);
    // Two passes of classical Gram-Schmidt give orthogonality to working precision.
    for (int pass = 0; pass < 2; ++pass) {
      for (Index j = 0; j < have; ++j) cand -= out.col(j).dot(cand) * out.col(j);
    }
    double norm = cand.norm();
    if (norm < accept) continue;
    cand /= norm;
    canonicalize_sign(cand);
    out.col(have++) = cand;
  }
  if (have < target) throw SvdError("orthonormal completion failed");
  return out;
}

/// Top-`p` right singular vectors of `x` as columns (cols x p). Directions
/// beyond the numerical rank are completed deterministically.
inline Matrix top_right_singular_vectors(const Matrix& x, Index p) {
  auto svd = canonical_svd(x);
  const Index keep = std::min(p, svd.rank);
  return complete_orthonormal(svd.v.leftCols(keep), p);
}

inline double frobenius_sq(const Matrix& m) { return m.squaredNorm(); }

}  // namespace rmm
