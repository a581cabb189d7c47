// Grid-tensor value types shared by every module: physical states on a
// (C, H, W) grid, trajectories of them, static PDE parameters, and
// per-channel standardization. All compute is f64.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace wfm {

// One physical state: C x H x W values, row-major (c, y, x).
struct Field {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Field() = default;
  Field(int c, int h, int w);

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Field& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool all_finite() const;
};

// Static physical constants of a system (kappa).
struct ParamVector {
  std::vector<double> values;
  std::vector<std::string> names;

  void validate() const;  // lengths match, all finite
};

// Ordered frames sharing one (C, H, W), plus the physical time step.
struct Trajectory {
  std::vector<Field> frames;
  double dt = 1.0;
  ParamVector params;

  void validate() const;
};

// Per-channel affine standardization; std must be strictly positive.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  int channels() const { return static_cast<int>(mean.size()); }
  void validate() const;
};

Field standardize(const Field& field, const Standardizer& s);
Field destandardize(const Field& field, const Standardizer& s);

// Population mean/std per channel over all frames and spatial positions.
Standardizer fit_standardizer(const std::vector<const Trajectory*>& trajectories);

}  // namespace wfm
