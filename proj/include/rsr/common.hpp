#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace rsr {

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidMatrix : public Error { public: using Error::Error; };
class DimensionError : public Error { public: using Error::Error; };
class NotPSD : public Error { public: using Error::Error; };
class NotPD : public Error { public: using Error::Error; };
class InvalidDataset : public Error { public: using Error::Error; };
class DegenerateUpdate : public Error { public: using Error::Error; };
class InlierTMEFailed : public Error { public: using Error::Error; };
class RegimeViolation : public Error { public: using Error::Error; };
class NeedsGroundTruth : public Error { public: using Error::Error; };
class InfeasibleAngles : public Error { public: using Error::Error; };
class DegenerateSupport : public Error { public: using Error::Error; };
class EstimatorFailure : public Error { public: using Error::Error; };
class InvalidParameter : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

// ---------------------------------------------------------------------------
// Tolerance table
//
// Every numeric threshold used by the library lives here so that property
// tests can pin exact values.
// ---------------------------------------------------------------------------

namespace tol {

/// Symmetry slack accepted on input matrices: |M[i,j]-M[j,i]| <= symmetry*(1+max|M|).
inline constexpr double symmetry = 1e-12;

/// Orthonormality slack on a basis: max-norm of U^T U - I.
inline constexpr double orthonormality = 1e-10;

/// Eigendecomposition reconstruction slack: ||V diag(s) V^T - M|| <= reconstruction*(1+||M||).
inline constexpr double reconstruction = 1e-9;

/// PSD acceptance: smallest eigenvalue >= -psd_slack*(1+largest).
inline constexpr double psd_slack = 1e-9;

/// PD acceptance for inputs that must be invertible: sigma_min > pd_rel*sigma_max.
inline constexpr double pd_rel = 1e-12;

/// Relative eigenvalue floor used when inverting a (possibly singular)
/// complement block, on top of any user-supplied absolute floor.
inline constexpr double schur_floor_rel = 1e-12;

/// Spectral-gap threshold below which the top-d subspace is flagged as
/// ill-defined: sigma_d - sigma_{d+1} <= degenerate_gap*max(1, sigma_1).
inline constexpr double degenerate_gap = 1e-12;

/// Eigenvalues above rank_rel*sigma_1 count toward the numerical rank.
inline constexpr double rank_rel = 1e-12;

/// Exact-rank weight mode: a point whose component outside range(Sigma)
/// exceeds exact_range_rel*||x|| receives weight zero.
inline constexpr double exact_range_rel = 1e-8;

/// An outlier with ||U_perp^T x|| <= on_subspace_rel*||x|| counts as lying on
/// the inlier subspace (alignment statistics become infinite).
inline constexpr double on_subspace_rel = 1e-15;

/// The projected-inlier TME solution is rejected as singular when
/// sigma_d <= inlier_tme_singular_rel * sigma_1.
inline constexpr double inlier_tme_singular_rel = 1e-10;

/// C_E estimates at or below this value flag degenerate (two-hyperplane) support.
inline constexpr double ce_degenerate = 1e-12;

}  // namespace tol

// ---------------------------------------------------------------------------
// Counter-based RNG
//
// A stateless SplitMix64 core addressed by (seed, stream, counter).  Streams
// are cheap to derive and independent, so data generation can be split per
// point index and reproduced under any parallel schedule.  Draw k of stream s
// under seed q is fin(base(q,s) + GOLDEN*k), with fin the SplitMix64
// finalizer; substream(s) derives a child stream id from the parent's.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::uint64_t golden = 0x9E3779B97F4A7C15ull;

inline constexpr std::uint64_t splitmix_fin(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

}  // namespace detail

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed),
        stream_(stream),
        base_(detail::splitmix_fin(seed ^ detail::splitmix_fin(stream + detail::golden))) {}

  std::uint64_t next_u64() { return detail::splitmix_fin(base_ + detail::golden * ++counter_); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1); safe as a log() argument.
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform index in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return n ? next_u64() % n : 0; }

  /// Standard normal via Box-Muller; the paired draw is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  /// Independent child generator; children of distinct ids never collide.
  CounterRng substream(std::uint64_t s) const {
    return CounterRng(seed_, detail::splitmix_fin(stream_ + detail::golden * (s + 1)));
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline double infinity() { return std::numeric_limits<double>::infinity(); }

}  // namespace rsr
