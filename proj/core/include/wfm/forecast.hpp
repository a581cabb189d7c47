// Ensemble forecast container: M generated trajectories plus the ground
// truth, the unit of evaluation. Serializes as one tensor file of shape
// (M, T, C, H, W), one of shape (T, C, H, W) for the truth, and a plain
// text manifest (seeds, sampler steps, bank, J, failure steps).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wfm/field.hpp"

namespace wfm {

struct EnsembleForecast {
  int members_m = 0;
  int steps_t = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> members;  // (M, T, C, H, W) row-major
  std::vector<Field> truth;     // T frames; may be empty until evaluation

  std::vector<std::int64_t> failure_steps;  // per member, -1 when none
  std::uint64_t seed = 0;
  int sampler_steps = 0;  // N
  std::string bank_name;
  int levels = 0;  // J

  std::size_t frame_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  double* member_frame(int m, int t) {
    return members.data() + (static_cast<std::size_t>(m) * steps_t + t) * frame_size();
  }
  const double* member_frame(int m, int t) const {
    return members.data() + (static_cast<std::size_t>(m) * steps_t + t) * frame_size();
  }
  Field member_field(int m, int t) const;
  void validate() const;
};

void save_forecast(const EnsembleForecast& forecast, const std::string& dir);
EnsembleForecast load_forecast(const std::string& dir);

}  // namespace wfm
