// Orthonormal Daubechies filter banks and 2-D multi-scale DWT/IDWT with
// periodic (circular) boundary handling.
//
// Conventions, fixed so coefficient-level comparisons are reproducible:
//  - analysis is a correlation: a[k] = sum_n lo[n] * x[(2k + n) mod L],
//    i.e. even-phase downsampling (kept indices 0, 2, 4, ...);
//  - the haar low-pass is (1/sqrt2, 1/sqrt2);
//  - synthesis is the exact adjoint of analysis (the transform is
//    orthonormal, so the adjoint is the inverse); the synthesis taps
//    stored in the bank are the time-reversed analysis taps;
//  - row direction (width) is transformed first, then columns.
//
// Sub-band order per scale: LL, LH, HL, HH where LH = low along width /
// high along height (horizontal detail), HL the transpose, HH diagonal.

#pragma once

#include <string>
#include <vector>

#include "wfm/field.hpp"
#include "wfm/rng.hpp"

namespace wfm {

struct FilterBank {
  int order = 0;  // vanishing moments p; filter length is 2p
  std::vector<double> lo_analysis;
  std::vector<double> hi_analysis;
  std::vector<double> lo_synthesis;  // time-reversed lo_analysis
  std::vector<double> hi_synthesis;  // time-reversed hi_analysis

  int length() const { return static_cast<int>(lo_analysis.size()); }
  std::string name() const;  // "haar", "db2", "db4", "db6"
};

// p in {1, 2, 4, 6}; taps are hardcoded and validated against the
// orthonormality and vanishing-moment invariants before returning.
FilterBank make_filter_bank(int order);
FilterBank make_filter_bank(const std::string& name);

// Sub-band tensors {j -> (C, 4, H_j, W_j)}, H_j = H / 2^j exactly.
// For j < J the LL slot holds the approximation produced at that scale
// (the input handed to scale j+1); reconstruction consumes only scale J's
// LL plus every scale's details.
struct WaveletPyramid {
  int channels = 0;
  int base_height = 0;  // H of the original field
  int base_width = 0;
  int levels = 0;       // J
  int filter_order = 0;
  // scales[j-1] holds (C, 4, H_j, W_j) row-major
  std::vector<std::vector<double>> scales;

  int scale_height(int j) const { return base_height >> j; }  // j in [1, J]
  int scale_width(int j) const { return base_width >> j; }
  std::size_t scale_size(int j) const {
    return static_cast<std::size_t>(channels) * 4 * scale_height(j) * scale_width(j);
  }
  double& at(int j, int c, int band, int y, int x);
  double at(int j, int c, int band, int y, int x) const;
  bool same_shape(const WaveletPyramid& o) const;
  std::size_t total_size() const;

  // Allocates zero-filled storage with the shape law applied.
  static WaveletPyramid zeros_like_field(int channels, int height, int width, int levels,
                                         int filter_order);
};

// One analysis level: approx (C, H/2, W/2) and details (C, 3, H/2, W/2)
// in order LH, HL, HH. H and W must be even and >= 2.
void dwt2_level(const Field& field, const FilterBank& bank, Field& approx,
                std::vector<double>& details);
void idwt2_level(const Field& approx, const std::vector<double>& details,
                 const FilterBank& bank, Field& out);

// Recursive decomposition: H and W must be divisible by 2^J.
WaveletPyramid dwt_multiscale(const Field& field, const FilterBank& bank, int levels);
Field idwt_multiscale(const WaveletPyramid& pyramid, const FilterBank& bank);

// Per-sub-band statistics of the DWT of standard Gaussian pixel noise.
struct GaussianityReport {
  struct SubBand {
    int scale = 0;
    int band = 0;  // 0..3
    double mean = 0.0;
    double variance = 0.0;
    std::size_t samples = 0;
  };
  std::vector<SubBand> sub_bands;
  // Pearson correlation between flattened pairs of distinct sub-bands,
  // pooled over realizations; indices into sub_bands.
  struct Pair {
    int a = 0;
    int b = 0;
    double correlation = 0.0;
  };
  std::vector<Pair> pairs;
  double max_abs_mean() const;
  double max_variance_deviation() const;   // max |var - 1|
  double max_abs_correlation() const;
};

// n_samples: minimum aggregate pixel count drawn (>= 1000 per sub-band is
// enforced by drawing enough realizations of a 64x64 field).
GaussianityReport pyramid_gaussianity_check(const FilterBank& bank, int levels,
                                            std::size_t n_samples, std::uint64_t seed);

// One tensor file per scale plus a plain-text manifest (filter id, J, shapes).
void save_pyramid(const WaveletPyramid& pyramid, const std::string& dir);
WaveletPyramid load_pyramid(const std::string& dir);

}  // namespace wfm
