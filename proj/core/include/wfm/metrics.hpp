// Probabilistic and spectral forecast verification: variance-normalized
// RMSE, the fair (unbiased) ensemble CRPS, isotropic power spectra by
// azimuthal averaging, and banded spectral coherence RMSE.

#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "wfm/forecast.hpp"

namespace wfm {

inline constexpr double kMetricEpsilon = 1e-6;

// sqrt( <(u - v)^2> / (<(u - <u>)^2> + eps) ), <.> = spatial mean over u.
double vrmse(std::span<const double> u, std::span<const double> v);

// Ferro's fair estimator; members is an (M, n) row-major buffer over the
// same n pixels as u. Requires M >= 2 (the pair term divides by M(M-1)).
double crps_fair(std::span<const double> u, std::span<const double> members, int ensemble);

// Ring assignment in index space: round(min(H,W) * |f|) with f the
// fractional frequency vector; rings run 1..min(H,W)/2, ring 0 and
// corner modes beyond the Nyquist ring are excluded.
int ring_count(int height, int width);

// Ring-averaged |DFT|^2 (unnormalized forward transform), rings 1..K.
std::vector<double> radial_psd(std::span<const double> field, int height, int width);

struct CoherenceTable {
  std::vector<double> gamma;      // per ring, clamped to [0, 1]
  double max_preclamp_excess = 0.0;  // diagnostic: max(gamma_raw - 1, 0)
};

// gamma(k) = (C_uv + eps) / (sqrt(P_u P_v) + eps) with C_uv the ring mean
// of |u_hat conj(v_hat)|.
CoherenceTable coherence(std::span<const double> u, std::span<const double> v, int height,
                         int width);

// Three contiguous ring groups of equal width in log k.
struct BandSpec {
  // band b covers rings r with lo[b] <= r <= hi[b]
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};
  void validate(int rings) const;
};

BandSpec make_log_bands(int rings);

// Per band: sqrt( mean over rings of (1 - gamma)^2 ).
std::array<double, 3> band_rmse_from_table(std::span<const double> gamma, const BandSpec& bands);
std::array<double, 3> coherence_band_rmse(std::span<const double> u, std::span<const double> v,
                                          int height, int width, const BandSpec& bands);

struct Window {
  int lo = 1;  // 1-based inclusive lead times
  int hi = 1;
  std::string tag() const;
};

struct MetricsReport {
  int steps_t = 0;
  int channels = 0;
  std::vector<double> vrmse_tc;         // (T, C)
  std::vector<double> crps_tc;          // (T, C)
  std::vector<double> coherence_tcb;    // (T, C, 3)
  std::vector<Window> windows;

  double& vrmse_at(int t, int c) { return vrmse_tc[static_cast<std::size_t>(t) * channels + c]; }
  double vrmse_at(int t, int c) const { return vrmse_tc[static_cast<std::size_t>(t) * channels + c]; }
  double& crps_at(int t, int c) { return crps_tc[static_cast<std::size_t>(t) * channels + c]; }
  double crps_at(int t, int c) const { return crps_tc[static_cast<std::size_t>(t) * channels + c]; }
  double& coherence_at(int t, int c, int b) {
    return coherence_tcb[(static_cast<std::size_t>(t) * channels + c) * 3 + b];
  }
  double coherence_at(int t, int c, int b) const {
    return coherence_tcb[(static_cast<std::size_t>(t) * channels + c) * 3 + b];
  }

  // Mean over lead times in the window, per channel (metric: "vrmse",
  // "crps", or "coherence_rmse" with band 0..2).
  double window_mean(const std::string& metric, const Window& w, int channel, int band = 0) const;

  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

struct EvaluateOptions {
  std::vector<Window> windows;
  bool coherence_per_member = false;  // default: coherence on ensemble mean
};

// VRMSE compares truth against the ensemble mean; CRPS scores the full
// ensemble; coherence compares truth against the ensemble mean unless
// coherence_per_member is set, which averages per-member gamma tables
// before the band RMSE.
MetricsReport evaluate(const EnsembleForecast& forecast, const EvaluateOptions& options);

}  // namespace wfm
