#pragma once

#include <numeric>
#include <utility>
#include <vector>

#include "rsr/diagnostics.hpp"

namespace rsr {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Generalized haystack model: n1 inliers ~ N(0, Sigma_in/d) supported on a
/// random d-subspace L*, n0 outliers ~ N(0, Sigma_out/D).  inlier_spectrum
/// gives the nonzero eigenvalues of Sigma_in on L*; outlier_covariance is
/// expressed in the [L*, L*^perp] frame so its off-diagonal block directly
/// realizes the cross-alignment knob of the model.
struct HaystackParams {
  int n1 = 0;
  int n0 = 0;
  int d = 0;
  int D = 0;
  Eigen::VectorXd inlier_spectrum;     // length d, positive
  Eigen::MatrixXd outlier_covariance;  // D x D, PD, frame coordinates
  std::uint64_t seed = 0;

  void validate() const {
    if (d < 1 || D <= d) throw InvalidParameter("HaystackParams: need 1 <= d < D");
    if (n1 < 0 || n0 < 0 || n1 + n0 < 1) throw InvalidParameter("HaystackParams: bad counts");
    if (inlier_spectrum.size() != d || inlier_spectrum.minCoeff() <= 0.0)
      throw InvalidParameter("HaystackParams: inlier spectrum must be d positive values");
    if (outlier_covariance.rows() != D || outlier_covariance.cols() != D)
      throw InvalidParameter("HaystackParams: outlier covariance must be D x D");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(outlier_covariance,
                                                      Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw InvalidParameter("HaystackParams: outlier covariance must be positive definite");
  }

  static HaystackParams isotropic(int n1, int n0, int d, int D, std::uint64_t seed) {
    HaystackParams p;
    p.n1 = n1;
    p.n0 = n0;
    p.d = d;
    p.D = D;
    p.inlier_spectrum = Eigen::VectorXd::Ones(d);
    p.outlier_covariance = Eigen::MatrixXd::Identity(D, D);
    p.seed = seed;
    return p;
  }
};

/// Prescribed principal angles, non-increasing, in [0, pi/2].
struct AngleProfile {
  Eigen::VectorXd angles;

  explicit AngleProfile(Eigen::VectorXd a) : angles(std::move(a)) {
    for (Eigen::Index i = 0; i < angles.size(); ++i) {
      if (!(angles[i] >= 0.0 && angles[i] <= 1.5707963267948966 + 1e-15))
        throw InvalidParameter("AngleProfile: angles must lie in [0, pi/2]");
      if (i > 0 && angles[i] > angles[i - 1] + 1e-15)
        throw InvalidParameter("AngleProfile: angles must be non-increasing");
    }
  }

  static AngleProfile single(int d, double theta1) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(d);
    a[0] = theta1;
    return AngleProfile(std::move(a));
  }
};

// ---------------------------------------------------------------------------
// Subspace generation
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::MatrixXd gaussian_matrix(int rows, int cols, CounterRng& rng) {
  Eigen::MatrixXd g(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) g(i, j) = rng.normal();
  return g;
}

/// Thin-QR orthonormalization with the R-diagonal sign fixed, so the output
/// distribution is Haar for Gaussian input and deterministic per draw.
inline Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& g) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  const Eigen::MatrixXd r = qr.matrixQR().topRows(g.cols()).triangularView<Eigen::Upper>();
  for (int j = 0; j < g.cols(); ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

}  // namespace detail

/// Haar-style random orthonormal basis.
inline SubspaceBasis sample_subspace(int D, int d, CounterRng& rng) {
  if (d < 1 || D <= d) throw InvalidParameter("sample_subspace: need 1 <= d < D");
  return SubspaceBasis(detail::orthonormalize(detail::gaussian_matrix(D, d, rng)));
}

/// Rotates base by the prescribed principal angles: column i becomes
/// cos(theta_i) u_i + sin(theta_i) w_i with the w_i a random orthonormal set
/// in the complement.  Feasible iff the number of nonzero angles fits in the
/// complement dimension.
inline SubspaceBasis perturb_subspace(const SubspaceBasis& base, const AngleProfile& profile,
                                      CounterRng& rng) {
  const int D = base.ambient_dim();
  const int d = base.dim();
  if (profile.angles.size() != d)
    throw DimensionError("perturb_subspace: profile length must equal base dimension");
  int k = 0;
  for (Eigen::Index i = 0; i < profile.angles.size(); ++i) k += (profile.angles[i] > 0.0);
  if (k > D - d)
    throw InfeasibleAngles("perturb_subspace: more nonzero angles than complement dimensions");
  Eigen::MatrixXd v = base.cols();
  if (k > 0) {
    SubspaceBasis comp = complement_basis(base);
    const Eigen::MatrixXd wq =
        detail::orthonormalize(detail::gaussian_matrix(D - d, k, rng));
    int j = 0;
    for (int i = 0; i < d; ++i) {
      const double theta = profile.angles[i];
      if (theta <= 0.0) continue;
      const Eigen::VectorXd w = comp.cols() * wq.col(j++);
      v.col(i) = std::cos(theta) * base.cols().col(i) + std::sin(theta) * w;
    }
  }
  return SubspaceBasis(std::move(v));
}

// ---------------------------------------------------------------------------
// Data models
// ---------------------------------------------------------------------------

/// Haystack sample.  Streams are split per point index (inlier i uses stream
/// 2+i, outlier j uses stream 2+n1+j); stream 0 draws L*, stream 1 the
/// output shuffle.  Identical params give bit-identical data.
inline std::pair<Dataset, GroundTruth> gen_haystack(const HaystackParams& p) {
  p.validate();
  CounterRng root(p.seed);
  CounterRng sub_rng = root.substream(0);
  SubspaceBasis u = sample_subspace(p.D, p.d, sub_rng);
  SubspaceBasis w = complement_basis(u);
  Eigen::MatrixXd frame(p.D, p.D);
  frame << u.cols(), w.cols();

  const Eigen::LLT<Eigen::MatrixXd> llt(p.outlier_covariance / p.D);
  if (llt.info() != Eigen::Success)
    throw InvalidParameter("gen_haystack: outlier covariance factorization failed");
  const Eigen::MatrixXd chol = llt.matrixL();

  const int n = p.n1 + p.n0;
  Eigen::MatrixXd pts(p.D, n);
  Labels labels(n);
  for (int i = 0; i < p.n1; ++i) {
    CounterRng g = root.substream(2 + i);
    Eigen::VectorXd y(p.d);
    for (int j = 0; j < p.d; ++j) y[j] = std::sqrt(p.inlier_spectrum[j] / p.d) * g.normal();
    pts.col(i) = u.cols() * y;
    labels[i] = 1;
  }
  for (int i = 0; i < p.n0; ++i) {
    CounterRng g = root.substream(2 + p.n1 + i);
    Eigen::VectorXd z(p.D);
    for (int j = 0; j < p.D; ++j) z[j] = g.normal();
    pts.col(p.n1 + i) = frame * (chol * z);
    labels[p.n1 + i] = 0;
  }

  // Seeded interleave.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng shuffle_rng = root.substream(1);
  for (int i = n - 1; i > 0; --i)
    std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
  Eigen::MatrixXd shuffled(p.D, n);
  Labels shuffled_labels(n);
  for (int i = 0; i < n; ++i) {
    shuffled.col(i) = pts.col(order[i]);
    shuffled_labels[i] = labels[order[i]];
  }

  Dataset data(std::move(shuffled), shuffled_labels);
  GroundTruth truth{u, std::move(shuffled_labels), std::nullopt};
  return {std::move(data), std::move(truth)};
}

/// Adds a cone-constrained perpendicular component to every inlier: magnitude
/// u * eps * ||P_L x|| with u uniform on [0,1], direction uniform on the unit
/// sphere of the complement.  Every noisy inlier satisfies
/// ||P_perp x|| <= eps ||P_L x||; outliers are untouched.
inline std::pair<Dataset, GroundTruth> apply_cone_noise(const Dataset& data,
                                                        const GroundTruth& truth, double epsilon,
                                                        CounterRng& rng) {
  truth.check_against(data);
  if (!(epsilon >= 0.0 && epsilon <= 1.0))
    throw InvalidParameter("apply_cone_noise: epsilon must lie in [0, 1]");
  Eigen::MatrixXd pts = data.points();
  GroundTruth out_truth = truth;
  out_truth.noise_epsilon = epsilon;
  if (epsilon == 0.0) return {Dataset(std::move(pts), truth.labels), std::move(out_truth)};

  SubspaceBasis comp = complement_basis(truth.basis);
  const int dp = comp.dim();
  for (int i = 0; i < data.count(); ++i) {
    if (!truth.labels[i]) continue;
    CounterRng g = rng.substream(i);
    Eigen::VectorXd dir(dp);
    for (int j = 0; j < dp; ++j) dir[j] = g.normal();
    const double dn = dir.norm();
    if (dn <= 0.0) continue;
    const double in_norm = (truth.basis.cols().transpose() * pts.col(i)).norm();
    const double mag = g.uniform() * epsilon * in_norm;
    pts.col(i) += comp.cols() * (dir * (mag / dn));
  }
  return {Dataset(std::move(pts), truth.labels), std::move(out_truth)};
}

// ---------------------------------------------------------------------------
// Initializations
// ---------------------------------------------------------------------------

inline SymMatrix init_identity(int D) { return SymMatrix::identity(D); }

/// Projector-plus-ridge initialization Pi_L + alpha I.
inline SymMatrix init_from_subspace(const SubspaceBasis& basis, double alpha) {
  if (!(alpha > 0.0)) throw InvalidParameter("init_from_subspace: alpha must be positive");
  const int D = basis.ambient_dim();
  return SymMatrix(basis.projector() + alpha * Eigen::MatrixXd::Identity(D, D));
}

/// TME initialization: the TME solution itself.
inline SymMatrix init_from_tme(const Dataset& data, const EstimatorConfig& cfg) {
  EstimatorResult r = tme_solve(data, cfg, SymMatrix::identity(data.ambient_dim()));
  if (!r.converged) throw EstimatorFailure("init_from_tme: TME did not converge");
  return r.sigma_final;
}

}  // namespace rsr
