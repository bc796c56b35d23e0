#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "rsr/spectral.hpp"

namespace rsr {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Point labels: 0 = outlier, 1 = inlier.
using Labels = std::vector<std::uint8_t>;

class Dataset {
 public:
  explicit Dataset(Eigen::MatrixXd points, std::optional<Labels> labels = std::nullopt)
      : points_(std::move(points)), labels_(std::move(labels)) {
    if (points_.rows() < 1 || points_.cols() < 1)
      throw InvalidDataset("Dataset: empty point matrix");
    if (!points_.allFinite()) throw InvalidDataset("Dataset: non-finite entries");
    for (Eigen::Index i = 0; i < points_.cols(); ++i) {
      if (points_.col(i).norm() <= 0.0)
        throw InvalidDataset("Dataset: zero column at index " + std::to_string(i));
    }
    if (labels_ && static_cast<Eigen::Index>(labels_->size()) != points_.cols())
      throw InvalidDataset("Dataset: label count does not match point count");
  }

  int ambient_dim() const { return static_cast<int>(points_.rows()); }
  int count() const { return static_cast<int>(points_.cols()); }
  const Eigen::MatrixXd& points() const { return points_; }
  const std::optional<Labels>& labels() const { return labels_; }
  bool has_labels() const { return labels_.has_value(); }

  int inlier_count() const {
    require_labels();
    int n = 0;
    for (auto v : *labels_) n += (v != 0);
    return n;
  }
  int outlier_count() const { return count() - inlier_count(); }

  void require_labels() const {
    if (!labels_) throw InvalidDataset("Dataset: labels required but absent");
  }

 private:
  Eigen::MatrixXd points_;
  std::optional<Labels> labels_;
};

struct EstimatorConfig {
  int d = 1;                    // target subspace dimension
  double gamma = 0.5;           // STE shrinkage, in (0,1)
  double tol = 1e-12;           // termination threshold on the normalized step
  int max_iter = 10000;
  bool trace_normalize = true;
  double ridge_rel = 1e-12;     // relative eigenvalue floor for weights; 0 = exact-rank mode

  void validate(int ambient_dim) const {
    if (d < 1 || d >= ambient_dim) throw InvalidParameter("EstimatorConfig: need 1 <= d < D");
    if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidParameter("EstimatorConfig: gamma in (0,1)");
    if (!(tol > 0.0)) throw InvalidParameter("EstimatorConfig: tol must be positive");
    if (max_iter < 1) throw InvalidParameter("EstimatorConfig: max_iter must be positive");
    if (ridge_rel < 0.0) throw InvalidParameter("EstimatorConfig: ridge_rel must be >= 0");
  }
};

struct TraceRecord {
  int iteration = 0;
  double step_delta = 0.0;
  std::optional<double> sin_theta1;
  std::optional<double> khat1;
  std::optional<double> khat2;
  std::optional<double> khat3;
  double wall_time_sec = 0.0;
};

struct IterationTrace {
  std::vector<TraceRecord> records;
};

struct EstimatorResult {
  SymMatrix sigma_final;
  SubspaceBasis subspace;  // top-d eigenvectors of sigma_final
  int iterations = 0;
  bool converged = false;
  IterationTrace trace;
};

/// Per-iteration hook: receives the iterate after each step and may fill the
/// optional fields of the trace record (diagnostics attach here).
using IterationObserver =
    std::function<void(int iteration, const Eigen::MatrixXd& sigma, TraceRecord& rec)>;

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Tyler weights w_i = 1 / (x_i^T Sigma_fl^{-1} x_i), with eigenvalues of
/// Sigma floored at ridge_rel * sigma_1.  With ridge_rel == 0 the weights use
/// the exact-rank limit convention instead: points with a component outside
/// range(Sigma) get weight zero, in-range points use the range-restricted
/// inverse.
inline Eigen::VectorXd robust_weights(const SymMatrix& sigma, const Dataset& data,
                                      double ridge_rel) {
  if (sigma.dim() != data.ambient_dim())
    throw DimensionError("robust_weights: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma.mat());
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double top = std::max(lam.maxCoeff(), 0.0);
  if (top <= 0.0) throw NotPSD("robust_weights: shape matrix has no positive eigenvalue");

  const Eigen::MatrixXd proj = es.eigenvectors().transpose() * data.points();  // D x N
  const int n = data.count();
  Eigen::VectorXd w(n);

  if (ridge_rel > 0.0) {
    Eigen::VectorXd inv_lam(lam.size());
    for (Eigen::Index j = 0; j < lam.size(); ++j)
      inv_lam[j] = 1.0 / std::max(lam[j], ridge_rel * top);
    for (int i = 0; i < n; ++i) {
      const double q = proj.col(i).cwiseAbs2().dot(inv_lam);
      w[i] = 1.0 / q;
    }
    return w;
  }

  // Exact-rank mode.
  std::vector<Eigen::Index> support;
  for (Eigen::Index j = 0; j < lam.size(); ++j)
    if (lam[j] > tol::rank_rel * top) support.push_back(j);
  for (int i = 0; i < n; ++i) {
    const double norm2 = proj.col(i).squaredNorm();
    double in2 = 0.0, q = 0.0;
    for (Eigen::Index j : support) {
      const double c = proj(j, i);
      in2 += c * c;
      q += c * c / lam[j];
    }
    const double out2 = std::max(norm2 - in2, 0.0);
    if (out2 > tol::exact_range_rel * tol::exact_range_rel * norm2 || q <= 0.0) {
      w[i] = 0.0;
    } else {
      w[i] = 1.0 / q;
    }
  }
  return w;
}

namespace detail {

inline Eigen::MatrixXd weighted_scatter(const Eigen::MatrixXd& x, const Eigen::VectorXd& w) {
  Eigen::MatrixXd b = x * w.cwiseSqrt().asDiagonal();
  Eigen::MatrixXd s = b * b.transpose();
  return 0.5 * (s + s.transpose());
}

inline Eigen::MatrixXd trace_normalized(const Eigen::MatrixXd& s) {
  const double tr = s.trace();
  return s / tr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// TME
// ---------------------------------------------------------------------------

/// One Tyler iteration: (D/N) * sum_i w_i x_i x_i^T, trace-normalized when
/// configured.
inline SymMatrix tme_step(const SymMatrix& sigma, const Dataset& data,
                          const EstimatorConfig& cfg) {
  const Eigen::VectorXd w = robust_weights(sigma, data, cfg.ridge_rel);
  Eigen::MatrixXd s = detail::weighted_scatter(data.points(), w) *
                      (static_cast<double>(data.ambient_dim()) / data.count());
  const double tr = s.trace();
  if (!std::isfinite(tr) || tr <= 0.0)
    throw DegenerateUpdate("tme_step: update collapsed below rank 1");
  if (cfg.trace_normalize) s /= tr;
  return SymMatrix(std::move(s));
}

namespace detail {

struct FixedPointOutcome {
  Eigen::MatrixXd sigma;
  int iterations = 0;
  bool converged = false;
  IterationTrace trace;
};

/// Shared TME fixed-point loop.  Termination compares trace-normalized
/// iterates in spectral norm, so runs with normalization on and off terminate
/// identically.
inline FixedPointOutcome tme_fixed_point(const Eigen::MatrixXd& points, double ridge_rel,
                                         double tol_step, int max_iter, bool trace_normalize,
                                         const Eigen::MatrixXd& sigma0) {
  const Dataset data(points);
  const double dim = points.rows();
  const double n = points.cols();
  FixedPointOutcome out;
  Eigen::MatrixXd sigma = sigma0;
  Eigen::MatrixXd prev_norm = trace_normalized(sigma);
  const auto t0 = std::chrono::steady_clock::now();
  for (int k = 1; k <= max_iter; ++k) {
    const Eigen::VectorXd w = robust_weights(SymMatrix(sigma), data, ridge_rel);
    Eigen::MatrixXd next = weighted_scatter(points, w) * (dim / n);
    const double tr = next.trace();
    if (!std::isfinite(tr) || tr <= 0.0)
      throw DegenerateUpdate("tme_solve: update collapsed below rank 1");
    const Eigen::MatrixXd next_norm = next / tr;
    const double delta = spectral_norm(next_norm - prev_norm);
    sigma = trace_normalize ? next_norm : next;
    prev_norm = next_norm;
    TraceRecord rec;
    rec.iteration = k;
    rec.step_delta = delta;
    rec.wall_time_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.trace.records.push_back(rec);
    out.iterations = k;
    if (delta <= tol_step) {
      out.converged = true;
      break;
    }
  }
  out.sigma = std::move(sigma);
  return out;
}

inline SubspaceBasis top_d_subspace(const Eigen::MatrixXd& sigma, int d) {
  EigenSystem es = eigh(SymMatrix(sigma));
  return SubspaceBasis(es.vectors.leftCols(d));
}

}  // namespace detail

/// Runs the TME iteration from sigma0 until the normalized step falls below
/// cfg.tol or max_iter is reached.  Non-convergence is reported through the
/// result flag, not an exception; TME existence can fail for concentrated
/// data and the caller decides.
inline EstimatorResult tme_solve(const Dataset& data, const EstimatorConfig& cfg,
                                 const SymMatrix& sigma0) {
  cfg.validate(data.ambient_dim());
  if (sigma0.dim() != data.ambient_dim()) throw DimensionError("tme_solve: sigma0 dimension");
  detail::FixedPointOutcome fp = detail::tme_fixed_point(
      data.points(), cfg.ridge_rel, cfg.tol, cfg.max_iter, cfg.trace_normalize, sigma0.mat());
  SymMatrix sigma_final{fp.sigma};
  SubspaceBasis sub = detail::top_d_subspace(fp.sigma, cfg.d);
  return EstimatorResult{std::move(sigma_final), std::move(sub), fp.iterations, fp.converged,
                         std::move(fp.trace)};
}

// ---------------------------------------------------------------------------
// STE
// ---------------------------------------------------------------------------

/// One subspace-constrained Tyler iteration.  Z = sum_i w_i x_i x_i^T (no
/// D/N factor); the top-d spectral part is kept and the tail eigenvalues are
/// replaced by gamma times their mean, so the output has exactly D-d equal
/// smallest eigenvalues.  If degenerate_gap is supplied it reports whether
/// sigma_d(Z) ~ sigma_{d+1}(Z), in which case the extracted subspace is
/// ill-defined.
inline SymMatrix ste_step(const SymMatrix& sigma, const Dataset& data, const EstimatorConfig& cfg,
                          bool* degenerate_gap = nullptr) {
  cfg.validate(data.ambient_dim());
  if (sigma.dim() != data.ambient_dim()) throw DimensionError("ste_step: dimension mismatch");
  const int D = data.ambient_dim();
  const int d = cfg.d;
  const Eigen::VectorXd w = robust_weights(sigma, data, cfg.ridge_rel);
  const Eigen::MatrixXd z = detail::weighted_scatter(data.points(), w);
  EigenSystem es = eigh(SymMatrix(z));
  if (degenerate_gap) {
    const double gap = es.values[d - 1] - es.values[d];
    *degenerate_gap = gap <= tol::degenerate_gap * std::max(1.0, std::abs(es.values[0]));
  }
  const double tail = es.values.tail(D - d).sum() / static_cast<double>(D - d);
  const Eigen::MatrixXd top = es.vectors.leftCols(d);
  Eigen::MatrixXd s = top * es.values.head(d).asDiagonal() * top.transpose() +
                      cfg.gamma * tail * (Eigen::MatrixXd::Identity(D, D) - top * top.transpose());
  s = 0.5 * (s + s.transpose()).eval();
  const double tr = s.trace();
  if (!std::isfinite(tr) || tr <= 0.0)
    throw DegenerateUpdate("ste_step: update collapsed below rank 1");
  if (cfg.trace_normalize) s /= tr;
  return SymMatrix(std::move(s));
}

/// Runs the STE iteration from sigma0.  When a reference subspace is given,
/// each trace record carries sin(theta_1) between the iterate's top-d
/// subspace and the reference; an observer may attach further diagnostics.
inline EstimatorResult ste_solve(const Dataset& data, const EstimatorConfig& cfg,
                                 const SymMatrix& sigma0,
                                 const SubspaceBasis* reference = nullptr,
                                 const IterationObserver& observer = {}) {
  cfg.validate(data.ambient_dim());
  if (sigma0.dim() != data.ambient_dim()) throw DimensionError("ste_solve: sigma0 dimension");
  if (reference && (reference->ambient_dim() != data.ambient_dim() || reference->dim() != cfg.d))
    throw DimensionError("ste_solve: reference subspace dimensions");

  Eigen::MatrixXd sigma = sigma0.mat();
  Eigen::MatrixXd prev_norm = detail::trace_normalized(sigma);
  IterationTrace trace;
  int iters = 0;
  bool converged = false;
  const auto t0 = std::chrono::steady_clock::now();
  for (int k = 1; k <= cfg.max_iter; ++k) {
    SymMatrix next = ste_step(SymMatrix(sigma), data, cfg);
    const Eigen::MatrixXd next_norm = detail::trace_normalized(next.mat());
    const double delta = spectral_norm(next_norm - prev_norm);
    sigma = next.mat();
    prev_norm = next_norm;

    TraceRecord rec;
    rec.iteration = k;
    rec.step_delta = delta;
    if (reference) {
      SubspaceBasis sub = detail::top_d_subspace(sigma, cfg.d);
      rec.sin_theta1 = principal_angles(sub, *reference).sin_theta1;
    }
    if (observer) observer(k, sigma, rec);
    rec.wall_time_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    trace.records.push_back(rec);
    iters = k;
    if (delta <= cfg.tol) {
      converged = true;
      break;
    }
  }
  SymMatrix sigma_final{sigma};
  SubspaceBasis sub = detail::top_d_subspace(sigma, cfg.d);
  return EstimatorResult{std::move(sigma_final), std::move(sub), iters, converged,
                         std::move(trace)};
}

// ---------------------------------------------------------------------------
// Projected-inlier TME
// ---------------------------------------------------------------------------

/// TME solution for the inliers projected into the given subspace; the
/// shape matrix the paper's inlier condition number is built from.  Returns a
/// d x d PD matrix scaled to trace 1.  Fails (InlierTMEFailed) when the inner
/// TME run does not converge or converges to a singular matrix, e.g. when the
/// inliers concentrate on a proper subspace.
inline SymMatrix projected_tme(const Dataset& data, const SubspaceBasis& basis,
                               const EstimatorConfig& cfg) {
  data.require_labels();
  if (basis.ambient_dim() != data.ambient_dim())
    throw DimensionError("projected_tme: basis dimension");
  const int d = basis.dim();
  const auto& labels = *data.labels();
  const int n1 = data.inlier_count();
  if (n1 < d + 1) throw InlierTMEFailed("projected_tme: too few inliers");

  Eigen::MatrixXd projected(d, n1);
  int j = 0;
  for (int i = 0; i < data.count(); ++i) {
    if (labels[i]) projected.col(j++) = basis.cols().transpose() * data.points().col(i);
  }

  detail::FixedPointOutcome fp;
  try {
    fp = detail::tme_fixed_point(projected, cfg.ridge_rel, cfg.tol, cfg.max_iter, true,
                                 Eigen::MatrixXd::Identity(d, d));
  } catch (const DegenerateUpdate&) {
    throw InlierTMEFailed("projected_tme: degenerate update (inliers not in general position)");
  } catch (const InvalidDataset&) {
    throw InlierTMEFailed("projected_tme: an inlier projects to zero");
  }
  if (!fp.converged) throw InlierTMEFailed("projected_tme: inner TME did not converge");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fp.sigma, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <=
      tol::inlier_tme_singular_rel * std::max(es.eigenvalues().maxCoeff(), 0.0))
    throw InlierTMEFailed("projected_tme: singular solution (inliers on a proper subspace)");
  return SymMatrix(fp.sigma / fp.sigma.trace());
}

}  // namespace rsr
