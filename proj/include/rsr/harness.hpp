#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "rsr/generators.hpp"
#include "rsr/io.hpp"

namespace rsr {

// ---------------------------------------------------------------------------
// Experiment specification (mirrors the JSON config schema)
// ---------------------------------------------------------------------------

struct InitSpec {
  enum class Kind { Identity, Subspace, Tme };
  Kind kind = Kind::Identity;
  double alpha = 1e-6;          // subspace init ridge
  std::vector<double> angles;   // principal-angle profile for a perturbed start
};

struct ModelSpec {
  int n1 = 0, n0 = 0, d = 1, D = 2;
  std::vector<double> inlier_spectrum;   // default: all ones
  std::vector<double> outlier_spectrum;  // frame-diagonal of Sigma_out, default ones
  double outlier_cross_block = 0.0;      // couples frame axes 0 and d, |c| < 1
  std::string dataset_path;              // alternative to generation (diagnose)
};

struct SweepGrids {
  std::vector<double> dssnr, gamma, epsilon, alpha;
};

struct ExperimentSpec {
  std::string kind;  // convergence | noise_sweep | phase_diagram | tme_vs_ste | diagnose
  ModelSpec model;
  EstimatorConfig estimator;
  InitSpec init;
  SweepGrids sweep;
  int replicates = 1;
  std::uint64_t seed = 0;
};

struct RunOptions {
  std::string out_dir = ".";
  std::string format = "csv";  // csv | json
  bool no_timestamp = false;   // suppress the timestamp header and zero wall-clock columns
  int threads = 1;
};

/// Recovery threshold on sin(theta_1) for phase maps and indicator columns.
inline constexpr double recovery_threshold = 1e-6;
/// Rate fits run over the sin(theta_1) window [rate_window_lo, rate_window_hi].
inline constexpr double rate_window_hi = 1e-2;
inline constexpr double rate_window_lo = 1e-10;
/// khat1 values beyond this are treated as saturated by floating point.
inline constexpr double khat_saturation = 1e9;

// ---------------------------------------------------------------------------
// Output rows
// ---------------------------------------------------------------------------

/// One grid-cell replicate.  Every row carries the full parameter tuple and
/// its derived seed; numeric outcome fields are finite or +-inf.
struct ExperimentRow {
  std::string kind;
  int cell = 0;
  int replicate = 0;
  std::uint64_t seed = 0;
  int D = 0, d = 0, n1 = 0, n0 = 0;
  double dssnr = 0.0, gamma = 0.0, epsilon = 0.0, alpha = 0.0;
  std::string init;
  int regime_violation = 0;
  int converged = 0;
  int tme_converged = 0;
  int iterations = 0;
  double final_sin_theta1 = 0.0;
  double tme_sin_theta1 = 0.0;
  double tme_gap = 0.0;
  double fitted_rate = 0.0;
  double c0_ref = 0.0;  // C0^{-1/2} reference contraction
  double condition_margin = 0.0;
  int condition_satisfied = 0;
  double khat1_growth_min = 0.0;
  double khat1_growth_median = 0.0;
  int recovered = 0;
  double runtime_sec = 0.0;
};

/// Per-iteration trace line of a convergence run.
struct TraceRow {
  int cell = 0;
  int replicate = 0;
  int iteration = 0;
  double step_delta = 0.0;
  std::optional<double> sin_theta1, khat1, khat2, khat3;
};

struct ExperimentArtifacts {
  std::vector<ExperimentRow> rows;
  std::vector<TraceRow> trace_rows;           // convergence only
  nlohmann::json summary;                     // runner-specific aggregate
};

namespace harness_detail {

inline const char* row_header() {
  return "kind,cell,replicate,seed,D,d,n1,n0,dssnr,gamma,epsilon,alpha,init,"
         "regime_violation,converged,tme_converged,iterations,final_sin_theta1,"
         "tme_sin_theta1,tme_gap,fitted_rate,c0_ref,condition_margin,"
         "condition_satisfied,khat1_growth_min,khat1_growth_median,recovered,runtime_sec";
}

inline void write_row(std::ostream& os, const ExperimentRow& r) {
  using detail::format_double;
  os << r.kind << ',' << r.cell << ',' << r.replicate << ',' << r.seed << ',' << r.D << ','
     << r.d << ',' << r.n1 << ',' << r.n0 << ',' << format_double(r.dssnr) << ','
     << format_double(r.gamma) << ',' << format_double(r.epsilon) << ','
     << format_double(r.alpha) << ',' << r.init << ',' << r.regime_violation << ','
     << r.converged << ',' << r.tme_converged << ',' << r.iterations << ','
     << format_double(r.final_sin_theta1) << ',' << format_double(r.tme_sin_theta1) << ','
     << format_double(r.tme_gap) << ',' << format_double(r.fitted_rate) << ','
     << format_double(r.c0_ref) << ',' << format_double(r.condition_margin) << ','
     << r.condition_satisfied << ',' << format_double(r.khat1_growth_min) << ','
     << format_double(r.khat1_growth_median) << ',' << r.recovered << ','
     << format_double(r.runtime_sec) << '\n';
}

inline nlohmann::json row_to_json(const ExperimentRow& r) {
  nlohmann::json j;
  j["kind"] = r.kind;
  j["cell"] = r.cell;
  j["replicate"] = r.replicate;
  j["seed"] = r.seed;
  j["D"] = r.D;
  j["d"] = r.d;
  j["n1"] = r.n1;
  j["n0"] = r.n0;
  j["dssnr"] = detail::num_to_json(r.dssnr);
  j["gamma"] = r.gamma;
  j["epsilon"] = r.epsilon;
  j["alpha"] = r.alpha;
  j["init"] = r.init;
  j["regime_violation"] = r.regime_violation;
  j["converged"] = r.converged;
  j["tme_converged"] = r.tme_converged;
  j["iterations"] = r.iterations;
  j["final_sin_theta1"] = detail::num_to_json(r.final_sin_theta1);
  j["tme_sin_theta1"] = detail::num_to_json(r.tme_sin_theta1);
  j["tme_gap"] = detail::num_to_json(r.tme_gap);
  j["fitted_rate"] = detail::num_to_json(r.fitted_rate);
  j["c0_ref"] = detail::num_to_json(r.c0_ref);
  j["condition_margin"] = detail::num_to_json(r.condition_margin);
  j["condition_satisfied"] = r.condition_satisfied;
  j["khat1_growth_min"] = detail::num_to_json(r.khat1_growth_min);
  j["khat1_growth_median"] = detail::num_to_json(r.khat1_growth_median);
  j["recovered"] = r.recovered;
  j["runtime_sec"] = r.runtime_sec;
  return j;
}

inline InitSpec::Kind init_kind_from_string(const std::string& s) {
  if (s == "identity") return InitSpec::Kind::Identity;
  if (s == "subspace") return InitSpec::Kind::Subspace;
  if (s == "tme") return InitSpec::Kind::Tme;
  throw ConfigError("init kind must be identity|subspace|tme, got '" + s + "'");
}

inline const char* init_kind_name(InitSpec::Kind k) {
  switch (k) {
    case InitSpec::Kind::Identity: return "identity";
    case InitSpec::Kind::Subspace: return "subspace";
    case InitSpec::Kind::Tme: return "tme";
  }
  return "?";
}

/// Frame-coordinate outlier covariance from the model knobs.
inline Eigen::MatrixXd build_outlier_covariance(const ModelSpec& m) {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(m.D, m.D);
  if (!m.outlier_spectrum.empty()) {
    if (static_cast<int>(m.outlier_spectrum.size()) != m.D)
      throw ConfigError("outlier_spectrum must have D entries");
    for (int i = 0; i < m.D; ++i) cov(i, i) = m.outlier_spectrum[i];
  }
  if (m.outlier_cross_block != 0.0) {
    if (std::abs(m.outlier_cross_block) >= 1.0)
      throw ConfigError("outlier_cross_block must satisfy |c| < 1");
    const double c = m.outlier_cross_block * std::sqrt(cov(0, 0) * cov(m.d, m.d));
    cov(0, m.d) = cov(m.d, 0) = c;
  }
  return cov;
}

inline HaystackParams make_params(const ModelSpec& m, std::uint64_t seed) {
  HaystackParams p;
  p.n1 = m.n1;
  p.n0 = m.n0;
  p.d = m.d;
  p.D = m.D;
  p.inlier_spectrum = Eigen::VectorXd::Ones(m.d);
  if (!m.inlier_spectrum.empty()) {
    if (static_cast<int>(m.inlier_spectrum.size()) != m.d)
      throw ConfigError("inlier_spectrum must have d entries");
    for (int i = 0; i < m.d; ++i) p.inlier_spectrum[i] = m.inlier_spectrum[i];
  }
  p.outlier_covariance = build_outlier_covariance(m);
  p.seed = seed;
  return p;
}

/// Re-derives (n1, n0) for a swept dssnr value, keeping the total count.
inline std::pair<int, int> counts_for_dssnr(const ModelSpec& m, double target) {
  const int total = m.n1 + m.n0;
  const double ratio = target * m.d / static_cast<double>(m.D - m.d);  // n1/n0
  int n0 = static_cast<int>(std::lround(total / (1.0 + ratio)));
  n0 = std::max(1, std::min(n0, total - 1));
  return {total - n0, n0};
}

inline SymMatrix build_init(const InitSpec& init, double alpha, const GroundTruth& truth,
                            const Dataset& data, const EstimatorConfig& cfg, CounterRng rng) {
  switch (init.kind) {
    case InitSpec::Kind::Identity:
      return init_identity(data.ambient_dim());
    case InitSpec::Kind::Subspace: {
      Eigen::VectorXd prof = Eigen::VectorXd::Zero(truth.basis.dim());
      for (std::size_t i = 0; i < init.angles.size() && i < static_cast<std::size_t>(prof.size());
           ++i)
        prof[static_cast<Eigen::Index>(i)] = init.angles[i];
      std::sort(prof.data(), prof.data() + prof.size(), std::greater<double>());
      SubspaceBasis start = perturb_subspace(truth.basis, AngleProfile(prof), rng);
      return init_from_subspace(start, alpha);
    }
    case InitSpec::Kind::Tme:
      return init_from_tme(data, cfg);
  }
  throw ConfigError("unknown init kind");
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Least-squares slope of log(sin theta) between the first iterate at or
/// below rate_window_hi and the first at or below rate_window_lo; returns the
/// per-iteration contraction factor, 0 when the trace never enters the window.
inline double fit_contraction(const IterationTrace& trace) {
  int k1 = -1, k2 = -1;
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    if (!r.sin_theta1) continue;
    if (k1 < 0 && *r.sin_theta1 <= rate_window_hi) k1 = static_cast<int>(i);
    if (k2 < 0 && *r.sin_theta1 <= rate_window_lo) {
      k2 = static_cast<int>(i);
      break;
    }
  }
  if (k1 < 0) return 0.0;
  if (k2 < 0) k2 = static_cast<int>(trace.records.size()) - 1;
  if (k2 == k1 && k1 > 0) --k1;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (int i = k1; i <= k2; ++i) {
    const auto& r = trace.records[i];
    if (!r.sin_theta1 || *r.sin_theta1 <= 0.0) continue;
    const double x = r.iteration;
    const double y = std::log(*r.sin_theta1);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) return 0.0;
  const double denom = n * sxx - sx * sx;
  if (denom <= 0.0) return 0.0;
  return std::exp((n * sxy - sx * sy) / denom);
}

/// Consecutive growth factors of khat1 below the saturation cap.
inline std::vector<double> khat1_growth(const IterationTrace& trace) {
  std::vector<double> g;
  for (std::size_t i = 0; i + 1 < trace.records.size(); ++i) {
    const auto& a = trace.records[i];
    const auto& b = trace.records[i + 1];
    if (!a.khat1 || !b.khat1) continue;
    if (!std::isfinite(*a.khat1) || *a.khat1 <= 0.0 || *a.khat1 > khat_saturation) continue;
    if (!std::isfinite(*b.khat1)) continue;
    g.push_back(*b.khat1 / *a.khat1);
  }
  return g;
}

/// Runs tasks 0..n-1 on the requested number of threads; outputs are indexed
/// by task, so results are deterministic regardless of the schedule.
template <typename F>
inline void parallel_for(int n, int threads, F&& body) {
  threads = std::max(1, threads);
  if (threads == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct Cell {
  double dssnr = 0.0, gamma = 0.0, epsilon = 0.0, alpha = 0.0;
  int index = 0;
};

/// Cartesian product over the grids a runner actually sweeps; absent grids
/// collapse to the base configuration value.
inline std::vector<Cell> expand_cells(const ExperimentSpec& spec, bool use_dssnr, bool use_gamma,
                                      bool use_epsilon, bool use_alpha) {
  const double base_dssnr =
      dssnr(std::max(spec.model.n1, 1), spec.model.n0, spec.model.d, spec.model.D);
  auto axis = [](const std::vector<double>& g, double fallback) {
    return g.empty() ? std::vector<double>{fallback} : g;
  };
  const auto ds = use_dssnr ? axis(spec.sweep.dssnr, base_dssnr) : std::vector<double>{base_dssnr};
  const auto gs = use_gamma ? axis(spec.sweep.gamma, spec.estimator.gamma)
                            : std::vector<double>{spec.estimator.gamma};
  const auto es = use_epsilon ? axis(spec.sweep.epsilon, 0.0) : std::vector<double>{0.0};
  const auto as = use_alpha ? axis(spec.sweep.alpha, spec.init.alpha)
                            : std::vector<double>{spec.init.alpha};
  std::vector<Cell> cells;
  int idx = 0;
  for (double dv : ds)
    for (double gv : gs)
      for (double ev : es)
        for (double av : as) cells.push_back(Cell{dv, gv, ev, av, idx++});
  return cells;
}

inline std::uint64_t derive_seed(std::uint64_t root, int cell, int replicate) {
  return CounterRng(root).substream(cell).substream(replicate).next_u64();
}

struct Instance {
  Dataset data;
  GroundTruth truth;
};

inline Instance make_instance(const ExperimentSpec& spec, const Cell& cell, int rep,
                              std::uint64_t inst_seed) {
  auto [n1, n0] = counts_for_dssnr(spec.model, cell.dssnr);
  ModelSpec m = spec.model;
  m.n1 = n1;
  m.n0 = n0;
  auto [data, truth] = gen_haystack(make_params(m, inst_seed));
  if (cell.epsilon > 0.0) {
    CounterRng noise_rng = CounterRng(inst_seed).substream(0x6e6f6973);  // per-instance noise
    auto noisy = apply_cone_noise(data, truth, cell.epsilon, noise_rng);
    return Instance{std::move(noisy.first), std::move(noisy.second)};
  }
  (void)rep;
  return Instance{std::move(data), std::move(truth)};
}

inline void fill_params(ExperimentRow& row, const ExperimentSpec& spec, const Cell& cell, int rep,
                        std::uint64_t inst_seed, const Instance& inst) {
  row.kind = spec.kind;
  row.cell = cell.index;
  row.replicate = rep;
  row.seed = inst_seed;
  row.D = inst.data.ambient_dim();
  row.d = inst.truth.basis.dim();
  row.n1 = inst.truth.inlier_count();
  row.n0 = inst.truth.outlier_count();
  row.dssnr = cell.dssnr;
  row.gamma = cell.gamma;
  row.epsilon = cell.epsilon;
  row.alpha = cell.alpha;
  row.init = init_kind_name(spec.init.kind);
}

}  // namespace harness_detail

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

/// Convergence-rate experiment: STE against ground truth, slope of
/// log sin(theta_1) over the fit window, khat1 growth monitoring, condition
/// margins.  Emits rows plus a per-iteration trace table.
inline ExperimentArtifacts run_convergence(const ExperimentSpec& spec, int threads = 1) {
  namespace hd = harness_detail;
  const auto cells = hd::expand_cells(spec, true, true, false, true);
  const int reps = std::max(1, spec.replicates);
  const int total = static_cast<int>(cells.size()) * reps;
  ExperimentArtifacts art;
  art.rows.resize(total);
  std::vector<std::vector<TraceRow>> traces(total);

  hd::parallel_for(total, threads, [&](int t) {
    const hd::Cell& cell = cells[t / reps];
    const int rep = t % reps;
    const std::uint64_t inst_seed = hd::derive_seed(spec.seed, cell.index, rep);
    hd::Instance inst = hd::make_instance(spec, cell, rep, inst_seed);

    EstimatorConfig cfg = spec.estimator;
    cfg.d = spec.model.d;
    cfg.gamma = cell.gamma;

    ExperimentRow row;
    hd::fill_params(row, spec, cell, rep, inst_seed, inst);

    const auto t0 = std::chrono::steady_clock::now();
    SymMatrix sigma0 = hd::build_init(spec.init, cell.alpha, inst.truth, inst.data, cfg,
                                      CounterRng(inst_seed).substream(0x696e6974));

    IterationObserver observer;
    try {
      SymMatrix sigma_in_star = projected_tme(inst.data, inst.truth.basis, cfg);
      observer = make_hat_kappa_observer(inst.truth, sigma_in_star);
    } catch (const InlierTMEFailed&) {
      // khat columns stay empty; growth stats report 0
    }

    try {
      ConditionCheck check = check_main_condition(sigma0, inst.data, inst.truth, cell.gamma, cfg);
      row.condition_margin = check.margin;
      row.condition_satisfied = check.satisfied ? 1 : 0;
      row.c0_ref = 1.0 / std::sqrt(check.report.C0);
    } catch (const RegimeViolation&) {
      row.regime_violation = 1;
      row.condition_margin = -infinity();
    }

    EstimatorResult res = ste_solve(inst.data, cfg, sigma0, &inst.truth.basis, observer);
    row.converged = res.converged ? 1 : 0;
    row.iterations = res.iterations;
    row.final_sin_theta1 = principal_angles(res.subspace, inst.truth.basis).sin_theta1;
    row.fitted_rate = hd::fit_contraction(res.trace);
    const auto growth = hd::khat1_growth(res.trace);
    if (!growth.empty()) {
      row.khat1_growth_min = *std::min_element(growth.begin(), growth.end());
      row.khat1_growth_median = hd::median(growth);
    }
    row.recovered = row.final_sin_theta1 <= recovery_threshold ? 1 : 0;
    row.runtime_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    art.rows[t] = row;

    for (const auto& r : res.trace.records)
      traces[t].push_back(
          TraceRow{cell.index, rep, r.iteration, r.step_delta, r.sin_theta1, r.khat1, r.khat2,
                   r.khat3});
  });

  for (auto& tr : traces)
    art.trace_rows.insert(art.trace_rows.end(), tr.begin(), tr.end());
  return art;
}

/// Noise sweep: cone-noise level against final error, with the fitted
/// error ~ epsilon^p exponent and the error/sqrt(epsilon) grid maximum in the
/// summary.
inline ExperimentArtifacts run_noise_sweep(const ExperimentSpec& spec, int threads = 1) {
  namespace hd = harness_detail;
  const auto cells = hd::expand_cells(spec, false, false, true, false);
  const int reps = std::max(1, spec.replicates);
  const int total = static_cast<int>(cells.size()) * reps;
  ExperimentArtifacts art;
  art.rows.resize(total);

  hd::parallel_for(total, threads, [&](int t) {
    const hd::Cell& cell = cells[t / reps];
    const int rep = t % reps;
    const std::uint64_t inst_seed = hd::derive_seed(spec.seed, cell.index, rep);
    hd::Instance inst = hd::make_instance(spec, cell, rep, inst_seed);

    EstimatorConfig cfg = spec.estimator;
    cfg.d = spec.model.d;

    ExperimentRow row;
    hd::fill_params(row, spec, cell, rep, inst_seed, inst);
    const auto t0 = std::chrono::steady_clock::now();
    SymMatrix sigma0 = hd::build_init(spec.init, cell.alpha, inst.truth, inst.data, cfg,
                                      CounterRng(inst_seed).substream(0x696e6974));
    EstimatorResult res = ste_solve(inst.data, cfg, sigma0, &inst.truth.basis);
    row.converged = res.converged ? 1 : 0;
    row.iterations = res.iterations;
    row.final_sin_theta1 = principal_angles(res.subspace, inst.truth.basis).sin_theta1;
    row.recovered = row.final_sin_theta1 <= recovery_threshold ? 1 : 0;
    row.runtime_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    art.rows[t] = row;
  });

  // Aggregate: median error per epsilon, fitted exponent, bounded-ratio stat.
  nlohmann::json medians = nlohmann::json::array();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  double max_ratio = 0.0;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> errs;
    for (int r = 0; r < reps; ++r) errs.push_back(art.rows[c * reps + r].final_sin_theta1);
    const double med = hd::median(errs);
    const double eps = cells[c].epsilon;
    medians.push_back({{"epsilon", eps}, {"median_sin_theta1", med}});
    if (eps > 0.0) {
      max_ratio = std::max(max_ratio, med / std::sqrt(eps));
      if (med > 0.0) {
        const double x = std::log(eps), y = std::log(med);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
      }
    }
  }
  double p = 0.0;
  if (n >= 2) {
    const double denom = n * sxx - sx * sx;
    if (denom > 0.0) p = (n * sxy - sx * sy) / denom;
  }
  art.summary = {{"fitted_exponent", p}, {"max_error_over_sqrt_epsilon", max_ratio},
                 {"medians", medians}};
  return art;
}

/// TME versus TME+STE across a dssnr grid: records both subspace errors and
/// the tail gap sigma_{d+1}/sigma_d of the TME solution.
inline ExperimentArtifacts run_tme_vs_ste(const ExperimentSpec& spec, int threads = 1) {
  namespace hd = harness_detail;
  const auto cells = hd::expand_cells(spec, true, true, false, false);
  const int reps = std::max(1, spec.replicates);
  const int total = static_cast<int>(cells.size()) * reps;
  ExperimentArtifacts art;
  art.rows.resize(total);

  hd::parallel_for(total, threads, [&](int t) {
    const hd::Cell& cell = cells[t / reps];
    const int rep = t % reps;
    const std::uint64_t inst_seed = hd::derive_seed(spec.seed, cell.index, rep);
    hd::Instance inst = hd::make_instance(spec, cell, rep, inst_seed);

    EstimatorConfig cfg = spec.estimator;
    cfg.d = spec.model.d;
    cfg.gamma = cell.gamma;

    ExperimentRow row;
    hd::fill_params(row, spec, cell, rep, inst_seed, inst);
    row.init = "tme";
    const auto t0 = std::chrono::steady_clock::now();

    EstimatorResult tme = tme_solve(inst.data, cfg, SymMatrix::identity(inst.data.ambient_dim()));
    row.tme_converged = tme.converged ? 1 : 0;
    row.tme_sin_theta1 = principal_angles(tme.subspace, inst.truth.basis).sin_theta1;
    EigenSystem es = eigh(tme.sigma_final);
    row.tme_gap = es.values[cfg.d] / es.values[cfg.d - 1];

    EstimatorResult ste = ste_solve(inst.data, cfg, tme.sigma_final, &inst.truth.basis);
    row.converged = ste.converged ? 1 : 0;
    row.iterations = ste.iterations;
    row.final_sin_theta1 = principal_angles(ste.subspace, inst.truth.basis).sin_theta1;
    row.recovered = row.final_sin_theta1 <= recovery_threshold ? 1 : 0;
    row.runtime_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    art.rows[t] = row;
  });

  nlohmann::json per_cell = nlohmann::json::array();
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> tme_err, ste_err;
    for (int r = 0; r < reps; ++r) {
      tme_err.push_back(art.rows[c * reps + r].tme_sin_theta1);
      ste_err.push_back(art.rows[c * reps + r].final_sin_theta1);
    }
    per_cell.push_back({{"dssnr", cells[c].dssnr},
                        {"tme_median_sin_theta1", hd::median(tme_err)},
                        {"ste_median_sin_theta1", hd::median(ste_err)}});
  }
  art.summary = {{"cells", per_cell}};
  return art;
}

/// Phase diagram over (dssnr, gamma, alpha): recovery indicator per replicate
/// and per-cell recovery fractions in the summary.
inline ExperimentArtifacts run_phase_diagram(const ExperimentSpec& spec, int threads = 1) {
  namespace hd = harness_detail;
  const auto cells = hd::expand_cells(spec, true, true, false, true);
  const int reps = std::max(1, spec.replicates);
  const int total = static_cast<int>(cells.size()) * reps;
  ExperimentArtifacts art;
  art.rows.resize(total);

  hd::parallel_for(total, threads, [&](int t) {
    const hd::Cell& cell = cells[t / reps];
    const int rep = t % reps;
    const std::uint64_t inst_seed = hd::derive_seed(spec.seed, cell.index, rep);
    hd::Instance inst = hd::make_instance(spec, cell, rep, inst_seed);

    EstimatorConfig cfg = spec.estimator;
    cfg.d = spec.model.d;
    cfg.gamma = cell.gamma;

    ExperimentRow row;
    hd::fill_params(row, spec, cell, rep, inst_seed, inst);
    row.regime_violation = (cell.dssnr <= cell.gamma) ? 1 : 0;
    const auto t0 = std::chrono::steady_clock::now();
    SymMatrix sigma0 = hd::build_init(spec.init, cell.alpha, inst.truth, inst.data, cfg,
                                      CounterRng(inst_seed).substream(0x696e6974));
    EstimatorResult res = ste_solve(inst.data, cfg, sigma0, &inst.truth.basis);
    row.converged = res.converged ? 1 : 0;
    row.iterations = res.iterations;
    row.final_sin_theta1 = principal_angles(res.subspace, inst.truth.basis).sin_theta1;
    row.recovered = row.final_sin_theta1 <= recovery_threshold ? 1 : 0;
    row.runtime_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    art.rows[t] = row;
  });

  nlohmann::json per_cell = nlohmann::json::array();
  for (std::size_t c = 0; c < cells.size(); ++c) {
    int rec = 0;
    for (int r = 0; r < reps; ++r) rec += art.rows[c * reps + r].recovered;
    per_cell.push_back({{"dssnr", cells[c].dssnr},
                        {"gamma", cells[c].gamma},
                        {"alpha", cells[c].alpha},
                        {"regime_violation", cells[c].dssnr <= cells[c].gamma ? 1 : 0},
                        {"recovery_fraction", static_cast<double>(rec) / reps}});
  }
  art.summary = {{"cells", per_cell}};
  return art;
}

/// Full diagnostics report for one instance and initialization; includes the
/// noiseless condition margin and, when a noise level is available, the
/// noisy-regime constants (with C_E estimated by Monte Carlo when not given).
inline nlohmann::json diagnose(const ExperimentSpec& spec) {
  namespace hd = harness_detail;
  std::optional<Dataset> data;
  std::optional<GroundTruth> truth;
  double epsilon = 0.0;
  if (!spec.model.dataset_path.empty()) {
    LoadedDataset loaded = read_dataset_file(spec.model.dataset_path);
    if (!loaded.data.has_labels())
      throw NeedsGroundTruth("diagnose: dataset has no labels");
    GroundTruth t = read_truth_file(spec.model.dataset_path + ".truth.json", loaded.data);
    epsilon = loaded.epsilon.value_or(t.noise_epsilon.value_or(0.0));
    data = std::move(loaded.data);
    truth = std::move(t);
  } else {
    hd::Cell cell;
    cell.dssnr = dssnr(std::max(spec.model.n1, 1), spec.model.n0, spec.model.d, spec.model.D);
    cell.gamma = spec.estimator.gamma;
    cell.epsilon = spec.sweep.epsilon.empty() ? 0.0 : spec.sweep.epsilon.front();
    cell.alpha = spec.init.alpha;
    hd::Instance inst = hd::make_instance(spec, cell, 0, hd::derive_seed(spec.seed, 0, 0));
    epsilon = cell.epsilon;
    data = std::move(inst.data);
    truth = std::move(inst.truth);
  }

  EstimatorConfig cfg = spec.estimator;
  cfg.d = truth->basis.dim();
  SymMatrix sigma0 = hd::build_init(spec.init, spec.init.alpha, *truth, *data, cfg,
                                    CounterRng(spec.seed).substream(0x696e6974));
  ConditionCheck check = check_main_condition(sigma0, *data, *truth, cfg.gamma, cfg);

  nlohmann::json out;
  out["report"] = report_to_json(check.report);
  out["condition_checker"] = "noiseless";
  out["satisfied"] = check.satisfied;

  if (epsilon > 0.0 && epsilon <= 0.5) {
    // Monte Carlo C_E estimate on the whitened projected inliers.
    try {
      SymMatrix sis = projected_tme(*data, truth->basis, cfg);
      const auto& labels = *data->labels();
      Eigen::MatrixXd proj(truth->basis.dim(), truth->inlier_count());
      int j = 0;
      for (int i = 0; i < data->count(); ++i)
        if (labels[i]) proj.col(j++) = truth->basis.cols().transpose() * data->points().col(i);
      CounterRng rng(spec.seed, 0x6365);
      CEEstimate ce = estimate_C_E(Dataset(proj), sis, 1000, rng);
      NoisyConstants nc =
          noisy_constants(*data, *truth, cfg.gamma, epsilon, std::max(ce.value, 1e-12), cfg);
      out["noisy_constants"] = {{"C_noisy", nc.C_noisy},
                                {"C_kappa1", nc.C_kappa1},
                                {"C_kappa2", nc.C_kappa2},
                                {"C_kappa3", detail::num_to_json(nc.C_kappa3)},
                                {"C_E_estimate", nc.C_E_estimate},
                                {"C_E_degenerate", ce.degenerate}};
      // The noisy checker reuses the condition with the noisy C.
      const auto& r = check.report;
      const double gamma = cfg.gamma;
      const double rhs_noisy = nc.C_noisy / r.C * r.condition_rhs;
      out["noisy_condition_rhs"] = detail::num_to_json(rhs_noisy);
      out["noisy_condition_margin"] = detail::num_to_json(r.kappa1 - rhs_noisy);
      (void)gamma;
    } catch (const InlierTMEFailed&) {
      out["noisy_constants"] = nullptr;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// File emission and dispatch
// ---------------------------------------------------------------------------

namespace harness_detail {

inline void write_rows_file(const std::string& path, const std::string& format,
                            const std::vector<ExperimentRow>& rows, bool no_timestamp) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path);
  if (format == "json") {
    nlohmann::json j = nlohmann::json::array();
    for (auto r : rows) {
      if (no_timestamp) r.runtime_sec = 0.0;
      j.push_back(row_to_json(r));
    }
    os << j.dump(2) << '\n';
    return;
  }
  if (!no_timestamp) {
    const std::time_t now = std::time(nullptr);
    char buf[64];
    std::strftime(buf, sizeof buf, "%FT%TZ", std::gmtime(&now));
    os << "# generated " << buf << '\n';
  }
  os << row_header() << '\n';
  for (auto r : rows) {
    if (no_timestamp) r.runtime_sec = 0.0;
    write_row(os, r);
  }
}

inline void write_trace_file(const std::string& path, const std::vector<TraceRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path);
  os << "cell,replicate,iteration,step_delta,sin_theta1,khat1,khat2,khat3\n";
  auto opt = [](const std::optional<double>& v) {
    return v ? detail::format_double(*v) : std::string();
  };
  for (const auto& r : rows)
    os << r.cell << ',' << r.replicate << ',' << r.iteration << ','
       << detail::format_double(r.step_delta) << ',' << opt(r.sin_theta1) << ','
       << opt(r.khat1) << ',' << opt(r.khat2) << ',' << opt(r.khat3) << '\n';
}

}  // namespace harness_detail

/// Runs the spec and writes its artifacts under options.out_dir.  Returns the
/// process exit code contract of the CLI: 0 success, 2 config error,
/// 3 regime violation outside a sweep, 4 estimator failure.
inline int execute(const ExperimentSpec& spec, const RunOptions& options) {
  namespace fs = std::filesystem;
  namespace hd = harness_detail;
  try {
    fs::create_directories(options.out_dir);
    const std::string ext = options.format == "json" ? ".json" : ".csv";
    ExperimentArtifacts art;
    if (spec.kind == "convergence") {
      art = run_convergence(spec, options.threads);
    } else if (spec.kind == "noise_sweep") {
      art = run_noise_sweep(spec, options.threads);
    } else if (spec.kind == "phase_diagram") {
      art = run_phase_diagram(spec, options.threads);
    } else if (spec.kind == "tme_vs_ste") {
      art = run_tme_vs_ste(spec, options.threads);
    } else if (spec.kind == "diagnose") {
      nlohmann::json report = diagnose(spec);
      std::ofstream os(options.out_dir + "/report.json");
      os << report.dump(2) << '\n';
      return 0;
    } else {
      throw ConfigError("unknown experiment kind '" + spec.kind + "'");
    }
    hd::write_rows_file(options.out_dir + "/rows" + ext, options.format, art.rows,
                        options.no_timestamp);
    if (!art.trace_rows.empty())
      hd::write_trace_file(options.out_dir + "/trace.csv", art.trace_rows);
    if (!art.summary.is_null()) {
      std::ofstream os(options.out_dir + "/summary.json");
      os << art.summary.dump(2) << '\n';
    }
    return 0;
  } catch (const ConfigError&) {
    throw;
  } catch (const RegimeViolation&) {
    return 3;
  } catch (const InlierTMEFailed&) {
    return 4;
  } catch (const EstimatorFailure&) {
    return 4;
  } catch (const DegenerateUpdate&) {
    return 4;
  }
}

// ---------------------------------------------------------------------------
// JSON config parsing (schema mirrors ExperimentSpec field names)
// ---------------------------------------------------------------------------

inline ExperimentSpec spec_from_json(const nlohmann::json& j) {
  try {
    ExperimentSpec spec;
    spec.kind = j.at("kind").get<std::string>();
    if (j.contains("model")) {
      const auto& m = j["model"];
      spec.model.n1 = m.value("n1", 0);
      spec.model.n0 = m.value("n0", 0);
      spec.model.d = m.value("d", 1);
      spec.model.D = m.value("D", 2);
      if (m.contains("inlier_spectrum"))
        spec.model.inlier_spectrum = m["inlier_spectrum"].get<std::vector<double>>();
      if (m.contains("outlier_spectrum"))
        spec.model.outlier_spectrum = m["outlier_spectrum"].get<std::vector<double>>();
      spec.model.outlier_cross_block = m.value("outlier_cross_block", 0.0);
      spec.model.dataset_path = m.value("dataset_path", std::string());
    }
    if (j.contains("dataset_path"))
      spec.model.dataset_path = j["dataset_path"].get<std::string>();
    if (j.contains("estimator")) {
      const auto& e = j["estimator"];
      spec.estimator.d = e.value("d", spec.model.d);
      spec.estimator.gamma = e.value("gamma", 0.5);
      spec.estimator.tol = e.value("tol", 1e-12);
      spec.estimator.max_iter = e.value("max_iter", 10000);
      spec.estimator.trace_normalize = e.value("trace_normalize", true);
      spec.estimator.ridge_rel = e.value("ridge_rel", 1e-12);
    } else {
      spec.estimator.d = spec.model.d;
    }
    if (j.contains("init")) {
      const auto& i = j["init"];
      spec.init.kind = harness_detail::init_kind_from_string(i.value("kind", "identity"));
      spec.init.alpha = i.value("alpha", 1e-6);
      if (i.contains("angles")) spec.init.angles = i["angles"].get<std::vector<double>>();
    }
    if (j.contains("sweep")) {
      const auto& s = j["sweep"];
      if (s.contains("dssnr")) spec.sweep.dssnr = s["dssnr"].get<std::vector<double>>();
      if (s.contains("gamma")) spec.sweep.gamma = s["gamma"].get<std::vector<double>>();
      if (s.contains("epsilon")) spec.sweep.epsilon = s["epsilon"].get<std::vector<double>>();
      if (s.contains("alpha")) spec.sweep.alpha = s["alpha"].get<std::vector<double>>();
    }
    spec.replicates = j.value("replicates", 1);
    if (spec.replicates < 1) throw ConfigError("replicates must be >= 1");
    spec.seed = j.value("seed", 0ull);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentSpec spec_from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  return spec_from_json(j);
}

}  // namespace rsr
