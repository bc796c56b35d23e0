#pragma once

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include "rsr/estimators.hpp"

namespace rsr {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Ground truth attached to a synthetic dataset: the planted subspace, the
/// inlier/outlier labels and, for cone-noise data, the noise level.
struct GroundTruth {
  SubspaceBasis basis;
  Labels labels;
  std::optional<double> noise_epsilon;

  void check_against(const Dataset& data) const {
    if (basis.ambient_dim() != data.ambient_dim())
      throw DimensionError("GroundTruth: basis ambient dimension mismatch");
    if (static_cast<int>(labels.size()) != data.count())
      throw DimensionError("GroundTruth: label count mismatch");
  }

  int inlier_count() const {
    int n = 0;
    for (auto v : labels) n += (v != 0);
    return n;
  }
  int outlier_count() const { return static_cast<int>(labels.size()) - inlier_count(); }
};

/// Every quantity entering the recovery condition, evaluated for one
/// (initialization, dataset) pair.  Ratios may be +inf.
struct DiagnosticsReport {
  double dssnr = 0.0;
  double kappa1 = 0.0;
  double kappa2 = 0.0;
  double kappa3 = 0.0;
  double kappa_in_star = 0.0;
  double A_stat = 0.0;
  double R_stat = 0.0;
  double S_stat = 0.0;
  double C = 0.0;
  double C0 = 0.0;
  double condition_rhs = 0.0;
  double condition_margin = 0.0;  // kappa1 - condition_rhs
};

/// Label split of one Tyler update T1(Sigma) plus the dominance ratio nu.
struct IterationDecomposition {
  SymMatrix sigma_plus_in;
  SymMatrix sigma_plus_out;
  double nu = 0.0;  // sigma_d(in) / ||out||
};

struct NoisyConstants {
  double C_noisy = 0.0;
  double C_kappa1 = 0.0;
  double C_kappa2 = 7.0;
  double C_kappa3 = 0.0;
  double C_E_estimate = 0.0;
};

struct HatKappas {
  double khat1 = 0.0;
  double khat2 = 0.0;
  double khat3 = 0.0;
};

struct Constants {
  double C = 0.0;
  double C0 = 0.0;
};

struct ConditionCheck {
  bool satisfied = false;
  double margin = 0.0;
  DiagnosticsReport report;
};

struct CEEstimate {
  double value = 0.0;
  bool degenerate = false;  // support looks like a union of two hyperplanes
};

// ---------------------------------------------------------------------------
// Scalar statistics
// ---------------------------------------------------------------------------

/// Dimension-scaled SNR (n1/d) / (n0/(D-d)); +inf when there are no outliers.
inline double dssnr(int n1, int n0, int d, int D) {
  if (n1 < 1 || d < 1 || D <= d || n0 < 0) throw InvalidParameter("dssnr: bad arguments");
  if (n0 == 0) return infinity();
  return (static_cast<double>(n1) / d) / (static_cast<double>(n0) / (D - d));
}

namespace detail {

inline double safe_ratio(double num, double den) {
  if (den <= 0.0) return infinity();
  return num / den;
}

/// Schur complement of the complement block, as a d x d matrix in the basis
/// of L*, with the flooring limit convention for singular blocks.
inline Eigen::MatrixXd schur_block(const BlockDecomposition& b) {
  const Eigen::MatrixXd pp_inv = floored_inverse(b.sigma_PP, 0.0);
  Eigen::MatrixXd s = b.sigma_LL - b.sigma_LP * pp_inv * b.sigma_PL;
  return 0.5 * (s + s.transpose());
}

inline double sym_min_eig(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double sym_max_eig(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

}  // namespace detail

/// kappa_1: smallest eigenvalue of the Schur complement of the complement
/// block over the largest eigenvalue of that block; +inf when the complement
/// block vanishes (range of sigma0 already equals L*).
inline double kappa1(const SymMatrix& sigma0, const GroundTruth& truth) {
  BlockDecomposition b = blocks(sigma0, truth.basis);
  const double top_pp = detail::sym_max_eig(b.sigma_PP);
  if (top_pp <= 0.0) return infinity();
  return detail::sym_min_eig(detail::schur_block(b)) / top_pp;
}

/// kappa_2: largest eigenvalue of the complement block over the smallest
/// eigenvalue of the whole matrix.
inline double kappa2(const SymMatrix& sigma0, const GroundTruth& truth) {
  BlockDecomposition b = blocks(sigma0, truth.basis);
  EigenSystem es = eigh(sigma0);
  return detail::safe_ratio(detail::sym_max_eig(b.sigma_PP), es.values[sigma0.dim() - 1]);
}

/// kappa_3: conditioning of the top block against the Schur complement.
inline double kappa3(const SymMatrix& sigma0, const GroundTruth& truth) {
  BlockDecomposition b = blocks(sigma0, truth.basis);
  return detail::safe_ratio(detail::sym_max_eig(b.sigma_LL),
                            detail::sym_min_eig(detail::schur_block(b)));
}

/// Condition number of the projected-inlier TME solution.
inline double kappa_in_star(const Dataset& data, const GroundTruth& truth,
                            const EstimatorConfig& cfg) {
  truth.check_against(data);
  Dataset labeled(data.points(), truth.labels);
  SymMatrix s = projected_tme(labeled, truth.basis, cfg);
  EigenSystem es = eigh(s);
  return detail::safe_ratio(es.values[0], es.values[s.dim() - 1]);
}

namespace detail {

/// sum over outliers of x x^T / ||U_perp^T x||^2; empty optional when some
/// outlier lies on L* (the statistic diverges).
inline std::optional<Eigen::MatrixXd> outlier_alignment_sum(const Dataset& data,
                                                            const GroundTruth& truth) {
  const int D = data.ambient_dim();
  SubspaceBasis w = complement_basis(truth.basis);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(D, D);
  for (int i = 0; i < data.count(); ++i) {
    if (truth.labels[i]) continue;
    const Eigen::VectorXd x = data.points().col(i);
    const double perp2 = (w.cols().transpose() * x).squaredNorm();
    const double lim = tol::on_subspace_rel * x.norm();
    if (perp2 <= lim * lim) return std::nullopt;
    sum += x * x.transpose() / perp2;
  }
  return sum;
}

}  // namespace detail

/// Alignment statistic: ((D-d)/n0) * ||sum_out x x^T / ||U_perp^T x||^2||.
/// +inf when an outlier lies on the inlier subspace; 1 (the infimum) when
/// there are no outliers.
inline double alignment_A(const Dataset& data, const GroundTruth& truth) {
  truth.check_against(data);
  const int n0 = truth.outlier_count();
  if (n0 == 0) return 1.0;
  auto sum = detail::outlier_alignment_sum(data, truth);
  if (!sum) return infinity();
  const int D = data.ambient_dim();
  const int d = truth.basis.dim();
  return (static_cast<double>(D - d) / n0) * spectral_norm(*sum);
}

/// Tail statistic: mean of the D-d smallest eigenvalues of the
/// sphere-normalized second-moment sum of all points.
inline double S_stat(const Dataset& data, int d) {
  const int D = data.ambient_dim();
  if (d < 1 || d >= D) throw DimensionError("S_stat: need 1 <= d < D");
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(D, D);
  for (int i = 0; i < data.count(); ++i) {
    const Eigen::VectorXd x = data.points().col(i);
    sum += x * x.transpose() / x.squaredNorm();
  }
  return tail_mean(SymMatrix(std::move(sum)), d);
}

/// Relative alignment: the unscaled alignment numerator over S_stat.
inline double relative_alignment_R(const Dataset& data, const GroundTruth& truth) {
  truth.check_against(data);
  if (truth.outlier_count() == 0) return 1.0;
  auto sum = detail::outlier_alignment_sum(data, truth);
  if (!sum) return infinity();
  return detail::safe_ratio(spectral_norm(*sum), S_stat(data, truth.basis.dim()));
}

/// Splits T1(sigma) by label and reports nu = sigma_d(in part) / ||out part||.
inline IterationDecomposition nu_decomposition(const SymMatrix& sigma, const Dataset& data,
                                               const GroundTruth& truth,
                                               const EstimatorConfig& cfg) {
  truth.check_against(data);
  const int D = data.ambient_dim();
  const int d = truth.basis.dim();
  const Eigen::VectorXd w = robust_weights(sigma, data, cfg.ridge_rel);
  Eigen::MatrixXd in = Eigen::MatrixXd::Zero(D, D);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(D, D);
  for (int i = 0; i < data.count(); ++i) {
    const Eigen::VectorXd x = data.points().col(i);
    (truth.labels[i] ? in : out) += w[i] * x * x.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_in(0.5 * (in + in.transpose()),
                                                       Eigen::EigenvaluesOnly);
  const double sigma_d_in = es_in.eigenvalues()[D - d];  // d-th largest
  const double out_norm = spectral_norm(out);
  const double nu = out_norm > 0.0 ? sigma_d_in / out_norm : infinity();
  return IterationDecomposition{SymMatrix(0.5 * (in + in.transpose())),
                                SymMatrix(0.5 * (out + out.transpose())), nu};
}

/// Per-iteration variants of kappa_1..3, whitened by the projected-inlier
/// shape matrix.  khat1 = sigma_d(phi([g1(S)]_LL)) / sigma_1(S_PP),
/// khat2 = sigma_1(S_PP) / sigma_D(S),
/// khat3 = sigma_1(phi(S_LL)) / sigma_d(phi([g1(S)]_LL)),
/// where phi(X) = W X W with W the inverse square root of sigma_in_star.
inline HatKappas hat_kappas(const SymMatrix& sigma, const GroundTruth& truth,
                            const SymMatrix& sigma_in_star) {
  if (sigma_in_star.dim() != truth.basis.dim())
    throw DimensionError("hat_kappas: sigma_in_star must be d x d");
  BlockDecomposition b = blocks(sigma, truth.basis);
  const Eigen::MatrixXd w = inv_sqrt(sigma_in_star);
  const Eigen::MatrixXd schur = detail::schur_block(b);
  const Eigen::MatrixXd phi_schur = w * schur * w;
  const Eigen::MatrixXd phi_ll = w * b.sigma_LL * w;
  EigenSystem es = eigh(sigma);

  HatKappas h;
  const double top_pp = detail::sym_max_eig(b.sigma_PP);
  h.khat1 = detail::safe_ratio(detail::sym_min_eig(phi_schur), top_pp);
  h.khat2 = detail::safe_ratio(top_pp, es.values[sigma.dim() - 1]);
  h.khat3 = detail::safe_ratio(detail::sym_max_eig(phi_ll), detail::sym_min_eig(phi_schur));
  return h;
}

/// Observer that fills the khat fields of an STE trace.
inline IterationObserver make_hat_kappa_observer(GroundTruth truth, SymMatrix sigma_in_star) {
  return [truth = std::move(truth), sis = std::move(sigma_in_star)](
             int, const Eigen::MatrixXd& sigma, TraceRecord& rec) {
    HatKappas h = hat_kappas(SymMatrix(sigma), truth, sis);
    rec.khat1 = h.khat1;
    rec.khat2 = h.khat2;
    rec.khat3 = h.khat3;
  };
}

// ---------------------------------------------------------------------------
// Constants and condition checkers
// ---------------------------------------------------------------------------

/// C = max(70, (46 dssnr + 14 gamma)/(dssnr - gamma)), C0 = 2 dssnr/(dssnr + gamma).
inline Constants constants(double dssnr_value, double gamma) {
  if (!(gamma > 0.0)) throw InvalidParameter("constants: gamma must be positive");
  if (!(dssnr_value > gamma)) throw RegimeViolation("constants: requires dssnr > gamma");
  Constants c;
  if (std::isinf(dssnr_value)) {
    c.C = std::max(70.0, 46.0);
    c.C0 = 2.0;
  } else {
    c.C = std::max(70.0, (46.0 * dssnr_value + 14.0 * gamma) / (dssnr_value - gamma));
    c.C0 = 2.0 * dssnr_value / (dssnr_value + gamma);
  }
  return c;
}

namespace detail {

inline double condition_rhs_value(double C, double kin, double A, double dssnr_value,
                                  double gamma, double k2, double R) {
  return C * (kin * A / dssnr_value) *
         (kin + A / (dssnr_value - gamma) + k2 * R * (1.0 + kin) / gamma);
}

}  // namespace detail

/// Scaled threshold the whitened khat1 sequence is measured against.
inline double tilde_kappa1(const DiagnosticsReport& report, const SymMatrix& sigma_in_star) {
  EigenSystem es = eigh(sigma_in_star);
  const double sigma_d = es.values[sigma_in_star.dim() - 1];
  // gamma is recoverable from C0 = 2 dssnr / (dssnr + gamma).
  const double gamma = report.dssnr * (2.0 - report.C0) / report.C0;
  return report.C * (report.A_stat / (report.dssnr * sigma_d)) *
         (report.kappa_in_star + report.A_stat / (report.dssnr - gamma) +
          report.kappa2 * report.R_stat * (1.0 + report.kappa_in_star) / gamma);
}

/// Evaluates the initialization condition: kappa1 against
/// C * (kin A / dssnr) * (kin + A/(dssnr-gamma) + kappa2 R (1+kin)/gamma).
/// Any infinite right-hand component makes the check fail with margin -inf.
inline ConditionCheck check_main_condition(const SymMatrix& sigma0, const Dataset& data,
                                           const GroundTruth& truth, double gamma,
                                           const EstimatorConfig& cfg = EstimatorConfig{}) {
  truth.check_against(data);
  DiagnosticsReport r;
  const int d = truth.basis.dim();
  const int D = data.ambient_dim();
  r.dssnr = dssnr(truth.inlier_count(), truth.outlier_count(), d, D);
  Constants c = constants(r.dssnr, gamma);  // throws RegimeViolation if dssnr <= gamma
  r.C = c.C;
  r.C0 = c.C0;
  r.kappa1 = kappa1(sigma0, truth);
  r.kappa2 = kappa2(sigma0, truth);
  r.kappa3 = kappa3(sigma0, truth);
  EstimatorConfig pcfg = cfg;
  pcfg.d = std::max(1, std::min(cfg.d, d));
  try {
    r.kappa_in_star = kappa_in_star(data, truth, pcfg);
  } catch (const InlierTMEFailed&) {
    r.kappa_in_star = infinity();
  }
  r.A_stat = alignment_A(data, truth);
  r.R_stat = relative_alignment_R(data, truth);
  r.S_stat = S_stat(data, d);
  r.condition_rhs =
      detail::condition_rhs_value(r.C, r.kappa_in_star, r.A_stat, r.dssnr, gamma, r.kappa2,
                                  r.R_stat);

  ConditionCheck out;
  if (!std::isfinite(r.condition_rhs)) {
    out.satisfied = false;
    out.margin = -infinity();
  } else {
    out.satisfied = r.kappa1 >= r.condition_rhs;
    out.margin = r.kappa1 - r.condition_rhs;
  }
  r.condition_margin = out.margin;
  out.report = r;
  return out;
}

/// Constants of the noisy-regime guarantee, evaluated literally with a
/// supplied (or separately estimated) expansion constant C_E.
inline NoisyConstants noisy_constants(const Dataset& data, const GroundTruth& truth, double gamma,
                                      double epsilon, double c_e,
                                      const EstimatorConfig& cfg = EstimatorConfig{}) {
  truth.check_against(data);
  if (!(epsilon > 0.0 && epsilon <= 0.5))
    throw InvalidParameter("noisy_constants: epsilon must lie in (0, 1/2]");
  if (!(c_e > 0.0 && c_e <= 1.0))
    throw InvalidParameter("noisy_constants: C_E must lie in (0, 1]");
  const int d = truth.basis.dim();
  const int D = data.ambient_dim();
  const int n1 = truth.inlier_count();
  const int n0 = truth.outlier_count();
  const double snr = dssnr(n1, n0, d, D);
  if (!(snr > gamma)) throw RegimeViolation("noisy_constants: requires dssnr > gamma");

  NoisyConstants nc;
  nc.C_E_estimate = c_e;
  nc.C_kappa2 = 7.0;
  EstimatorConfig pcfg = cfg;
  pcfg.d = std::max(1, std::min(cfg.d, d));
  double kin;
  try {
    kin = kappa_in_star(data, truth, pcfg);
  } catch (const InlierTMEFailed&) {
    kin = infinity();
  }
  nc.C_kappa3 = 13.0 * kin + 1.0;

  const double num = 152.0 * (snr + gamma) / (2.0 * gamma) +
                     16.0 * (snr + 2.0 * gamma) * (snr + 2.0 * gamma) /
                         (9.0 * gamma * gamma) * (snr + gamma);
  const double den = 1.0 - 2.0 * (snr + 2.0 * gamma) / (3.0 * (snr + gamma));
  nc.C_noisy = 3340.0 / c_e + num / den;

  const double m1 = std::min({snr / gamma - 1.0, 1.0, c_e / 2.0});
  const double m2 = std::min(snr / gamma - 1.0, 1.0);
  const double t1 = (1.0 / (epsilon * nc.C_kappa2)) * m1 * m1;
  const double t2 = (static_cast<double>(n0) / (static_cast<double>(n1) * (D - d))) * m2;
  nc.C_kappa1 = (1.0 / (100.0 * epsilon * nc.C_kappa3)) * std::min(t1, t2);
  return nc;
}

/// Heuristic lower estimate of the expansion constant C_E: the minimum over
/// sampled unit directions v of sigma_d( sum_x (x^T v)^2/||x||^4 * x x^T/||x||^2 ) * d/n
/// on inliers whitened by the projected TME solution.  An estimate, not the
/// uniform constant; values at or below tol::ce_degenerate flag support that
/// concentrates on a union of two hyperplanes.
inline CEEstimate estimate_C_E(const Dataset& inliers_projected, const SymMatrix& sigma_in_star,
                               int trials, CounterRng& rng) {
  const int d = inliers_projected.ambient_dim();
  const int n = inliers_projected.count();
  if (sigma_in_star.dim() != d) throw DimensionError("estimate_C_E: sigma_in_star must be d x d");
  if (trials < 1) throw InvalidParameter("estimate_C_E: trials must be positive");

  const Eigen::MatrixXd w = inv_sqrt(sigma_in_star);
  Eigen::MatrixXd y = w * inliers_projected.points();  // whitened
  double best = infinity();
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = rng.normal();
    const double vn = v.norm();
    if (vn <= 0.0) continue;
    v /= vn;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd x = y.col(i);
      const double n2 = x.squaredNorm();
      const double c = (x.dot(v) * x.dot(v)) / (n2 * n2);
      sum += (c / n2) * x * x.transpose();
    }
    best = std::min(best, detail::sym_min_eig(sum) * static_cast<double>(d) / n);
  }
  CEEstimate e;
  e.degenerate = !(best > tol::ce_degenerate);
  e.value = std::min(std::max(best, 0.0), 1.0);
  return e;
}

}  // namespace rsr
