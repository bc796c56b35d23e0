#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include "rsr/common.hpp"

namespace rsr {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Dense symmetric matrix.  Construction validates finiteness and symmetry
/// within tol::symmetry and then symmetrizes exactly, so downstream code can
/// rely on M == M^T bit-for-bit.
class SymMatrix {
 public:
  explicit SymMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) throw DimensionError("SymMatrix: matrix is not square");
    if (!m_.allFinite()) throw InvalidMatrix("SymMatrix: non-finite entries");
    const double scale = 1.0 + m_.cwiseAbs().maxCoeff();
    const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
    if (asym > tol::symmetry * scale) throw InvalidMatrix("SymMatrix: asymmetry beyond tolerance");
    m_ = 0.5 * (m_ + m_.transpose()).eval();
  }

  static SymMatrix identity(int dim) { return SymMatrix(Eigen::MatrixXd::Identity(dim, dim)); }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& mat() const { return m_; }

 private:
  Eigen::MatrixXd m_;
};

/// Orthonormal D x d basis of a d-subspace, 1 <= d < D.
class SubspaceBasis {
 public:
  explicit SubspaceBasis(Eigen::MatrixXd u) : u_(std::move(u)) {
    if (u_.rows() < 2 || u_.cols() < 1 || u_.cols() >= u_.rows())
      throw DimensionError("SubspaceBasis: need 1 <= d < D");
    if (!u_.allFinite()) throw InvalidMatrix("SubspaceBasis: non-finite entries");
    const Eigen::MatrixXd gram = u_.transpose() * u_;
    const double err =
        (gram - Eigen::MatrixXd::Identity(u_.cols(), u_.cols())).cwiseAbs().maxCoeff();
    if (err > tol::orthonormality)
      throw InvalidMatrix("SubspaceBasis: columns not orthonormal");
  }

  int ambient_dim() const { return static_cast<int>(u_.rows()); }
  int dim() const { return static_cast<int>(u_.cols()); }
  const Eigen::MatrixXd& cols() const { return u_; }

  /// Orthogonal projector U U^T onto the subspace.
  Eigen::MatrixXd projector() const { return u_ * u_.transpose(); }

 private:
  Eigen::MatrixXd u_;
};

/// Full eigendecomposition with eigenvalues in non-increasing order and a
/// deterministic eigenvector gauge (largest-magnitude entry positive, ties
/// resolved at the lowest index; equal eigenvalues ordered by the first
/// differing vector coordinate).
struct EigenSystem {
  Eigen::VectorXd values;   // non-increasing
  Eigen::MatrixXd vectors;  // vectors.col(i) pairs with values[i]
};

/// Blocks of a symmetric matrix relative to a subspace L and its complement P:
/// sigma_LL = U^T M U and so on, with P spanned by complement_basis(U).
struct BlockDecomposition {
  Eigen::MatrixXd sigma_LL;
  Eigen::MatrixXd sigma_LP;
  Eigen::MatrixXd sigma_PL;
  Eigen::MatrixXd sigma_PP;
  SubspaceBasis basis;
  SubspaceBasis complement;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

inline void fix_vector_signs(Eigen::MatrixXd& v) {
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const double a = std::abs(v(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (v(best, j) < 0.0) v.col(j) = -v.col(j);
  }
}

inline bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return false;
}

}  // namespace detail

/// Symmetric eigendecomposition (backward-stable dense solver behind the
/// scenes) with the deterministic ordering/sign policy of EigenSystem.
inline EigenSystem eigh(const SymMatrix& m) {
  if (!m.mat().allFinite()) throw InvalidMatrix("eigh: non-finite entries");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m.mat());
  if (solver.info() != Eigen::Success) throw InvalidMatrix("eigh: eigensolver failed");

  const int n = m.dim();
  EigenSystem sys;
  sys.values.resize(n);
  sys.vectors.resize(n, n);
  // Eigen returns increasing order; reverse it.
  for (int i = 0; i < n; ++i) {
    sys.values[i] = solver.eigenvalues()[n - 1 - i];
    sys.vectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  detail::fix_vector_signs(sys.vectors);

  // Stable order inside exactly-equal eigenvalue runs.
  for (int i = 0; i + 1 < n;) {
    int j = i + 1;
    while (j < n && sys.values[j] == sys.values[i]) ++j;
    if (j - i > 1) {
      std::vector<int> idx(j - i);
      std::iota(idx.begin(), idx.end(), i);
      std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        return detail::lex_less(sys.vectors.col(a), sys.vectors.col(b));
      });
      Eigen::MatrixXd tmp(n, j - i);
      for (int k = 0; k < j - i; ++k) tmp.col(k) = sys.vectors.col(idx[k]);
      sys.vectors.middleCols(i, j - i) = tmp;
    }
    i = j;
  }
  return sys;
}

/// Orthonormal basis of the orthogonal complement; deterministic given U.
inline SubspaceBasis complement_basis(const SubspaceBasis& u) {
  const int D = u.ambient_dim();
  const int d = u.dim();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(u.cols());
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd w = q.rightCols(D - d);
  // One re-orthogonalization pass against U tightens the cross terms.
  w -= u.cols() * (u.cols().transpose() * w);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr2(w);
  Eigen::MatrixXd wq = qr2.householderQ() * Eigen::MatrixXd::Identity(D, D - d);
  detail::fix_vector_signs(wq);
  return SubspaceBasis(std::move(wq));
}

inline BlockDecomposition blocks(const SymMatrix& m, const SubspaceBasis& u) {
  if (m.dim() != u.ambient_dim())
    throw DimensionError("blocks: matrix and basis dimensions disagree");
  SubspaceBasis w = complement_basis(u);
  BlockDecomposition b{
      u.cols().transpose() * m.mat() * u.cols(), u.cols().transpose() * m.mat() * w.cols(),
      w.cols().transpose() * m.mat() * u.cols(), w.cols().transpose() * m.mat() * w.cols(),
      u, w};
  return b;
}

namespace detail {

/// Inverse of a PSD block with eigenvalues clamped from below at
/// max(floor, tol::schur_floor_rel * sigma_1); the limit convention for
/// singular blocks.  Eigenvalues that are still zero contribute nothing.
inline Eigen::MatrixXd floored_inverse(const Eigen::MatrixXd& a, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double top = lam.size() ? lam.maxCoeff() : 0.0;
  const double eff = std::max(floor, tol::schur_floor_rel * std::max(top, 0.0));
  Eigen::VectorXd inv(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    const double v = std::max(lam[i], eff);
    inv[i] = v > 0.0 ? 1.0 / v : 0.0;
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

inline void require_psd(const SymMatrix& m, const char* who) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.mat(), Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo < -tol::psd_slack * (1.0 + std::abs(hi)))
    throw NotPSD(std::string(who) + ": matrix is not positive semidefinite");
}

}  // namespace detail

/// Splits a PSD matrix M into g1 + g2 where g1 carries the Schur complement
/// of the complement block in its (L,L) position (mapped back to ambient
/// coordinates) and zeros elsewhere, and g2 = M - g1.  For PD input both
/// parts are PSD with ranks d and D-d.  A singular complement block is
/// inverted under the eigenvalue-flooring limit convention.
inline std::pair<SymMatrix, SymMatrix> schur_split(const SymMatrix& m, const SubspaceBasis& u,
                                                   double floor = 0.0) {
  if (floor < 0.0) throw InvalidParameter("schur_split: floor must be >= 0");
  detail::require_psd(m, "schur_split");
  BlockDecomposition b = blocks(m, u);
  const Eigen::MatrixXd pp_inv = detail::floored_inverse(b.sigma_PP, floor);
  Eigen::MatrixXd s = b.sigma_LL - b.sigma_LP * pp_inv * b.sigma_PL;
  s = 0.5 * (s + s.transpose()).eval();
  Eigen::MatrixXd g1 = u.cols() * s * u.cols().transpose();
  g1 = 0.5 * (g1 + g1.transpose()).eval();
  Eigen::MatrixXd g2 = m.mat() - g1;
  return {SymMatrix(std::move(g1)), SymMatrix(std::move(g2))};
}

/// Mean of the D-d smallest eigenvalues.
inline double tail_mean(const SymMatrix& m, int d) {
  const int D = m.dim();
  if (d < 1 || d >= D) throw DimensionError("tail_mean: need 1 <= d < D");
  EigenSystem es = eigh(m);
  return es.values.tail(D - d).sum() / static_cast<double>(D - d);
}

struct RankTruncation {
  SymMatrix pi_d;    // sum of the top-d spectral parts
  SymMatrix p_tail;  // projector onto the span of the D-d smallest eigenvectors
  bool degenerate;   // sigma_d ~ sigma_{d+1}: top-d subspace ill-defined
};

inline RankTruncation rank_d_truncation(const SymMatrix& m, int d) {
  const int D = m.dim();
  if (d < 1 || d >= D) throw DimensionError("rank_d_truncation: need 1 <= d < D");
  EigenSystem es = eigh(m);
  const Eigen::MatrixXd top = es.vectors.leftCols(d);
  const Eigen::MatrixXd rest = es.vectors.rightCols(D - d);
  Eigen::MatrixXd pi = top * es.values.head(d).asDiagonal() * top.transpose();
  Eigen::MatrixXd pt = rest * rest.transpose();
  const double gap = es.values[d - 1] - es.values[d];
  const bool degenerate = gap <= tol::degenerate_gap * std::max(1.0, std::abs(es.values[0]));
  return RankTruncation{SymMatrix(0.5 * (pi + pi.transpose())),
                        SymMatrix(0.5 * (pt + pt.transpose())), degenerate};
}

struct PrincipalAngles {
  Eigen::VectorXd angles;  // radians, non-increasing, in [0, pi/2]
  double sin_theta1;       // sine of the largest angle
};

/// Principal angles between two equal-dimension subspaces.  Cosines come from
/// the singular values of U1^T U2 and sines from those of (I - P1) U2, paired
/// per principal direction, so small angles keep full precision.
inline PrincipalAngles principal_angles(const SubspaceBasis& u1, const SubspaceBasis& u2) {
  if (u1.ambient_dim() != u2.ambient_dim() || u1.dim() != u2.dim())
    throw DimensionError("principal_angles: dimension mismatch");
  const int d = u1.dim();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd_cos(u1.cols().transpose() * u2.cols());
  Eigen::VectorXd cosines = svd_cos.singularValues();  // decreasing
  Eigen::MatrixXd residual = u2.cols() - u1.cols() * (u1.cols().transpose() * u2.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd_sin(residual);
  Eigen::VectorXd sines = svd_sin.singularValues();  // decreasing

  PrincipalAngles out;
  out.angles.resize(d);
  for (int i = 0; i < d; ++i) {
    const double c = std::clamp(cosines[d - 1 - i], 0.0, 1.0);
    const double s = std::clamp(sines[i], 0.0, 1.0);
    out.angles[i] = std::atan2(s, c);
  }
  out.sin_theta1 = std::clamp(sines[0], 0.0, 1.0);
  return out;
}

namespace detail {

inline Eigen::MatrixXd sym_power(const Eigen::MatrixXd& a, double p, const char* who) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd& lam = es.eigenvalues();
  if (lam.minCoeff() <= tol::pd_rel * std::max(lam.maxCoeff(), 0.0))
    throw NotPD(std::string(who) + ": matrix is not positive definite");
  Eigen::VectorXd plam(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i) plam[i] = std::pow(lam[i], p);
  return es.eigenvectors() * plam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Matrix geometric mean A # B = A^{1/2} (A^{-1/2} B A^{-1/2})^{1/2} A^{1/2}.
inline SymMatrix geometric_mean(const SymMatrix& a, const SymMatrix& b) {
  if (a.dim() != b.dim()) throw DimensionError("geometric_mean: dimension mismatch");
  const Eigen::MatrixXd ah = detail::sym_power(a.mat(), 0.5, "geometric_mean");
  const Eigen::MatrixXd ahi = detail::sym_power(a.mat(), -0.5, "geometric_mean");
  const Eigen::MatrixXd mid = detail::sym_power(ahi * b.mat() * ahi, 0.5, "geometric_mean");
  Eigen::MatrixXd g = ah * mid * ah;
  return SymMatrix(0.5 * (g + g.transpose()));
}

/// Inverse symmetric square root of a PD matrix (shared by diagnostics).
inline Eigen::MatrixXd inv_sqrt(const SymMatrix& a) {
  return detail::sym_power(a.mat(), -0.5, "inv_sqrt");
}

/// Spectral norm of a symmetric matrix.
inline double spectral_norm(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()),
                                                    Eigen::EigenvaluesOnly);
  return std::max(std::abs(es.eigenvalues().minCoeff()), std::abs(es.eigenvalues().maxCoeff()));
}

}  // namespace rsr
