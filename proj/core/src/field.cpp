#include "wfm/field.hpp"

#include <cmath>
#include <stdexcept>

namespace wfm {

Field::Field(int c, int h, int w) : channels(c), height(h), width(w) {
  if (c < 1 || h < 1 || w < 1) throw std::invalid_argument("Field: all dims must be >= 1");
  data.assign(static_cast<std::size_t>(c) * h * w, 0.0);
}

bool Field::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void ParamVector::validate() const {
  if (values.size() != names.size())
    throw std::invalid_argument("ParamVector: values/names length mismatch");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("ParamVector: non-finite value");
}

void Trajectory::validate() const {
  if (frames.empty()) throw std::invalid_argument("Trajectory: no frames");
  if (!(dt > 0.0)) throw std::invalid_argument("Trajectory: dt must be positive");
  for (const Field& f : frames)
    if (!f.same_shape(frames.front()))
      throw std::invalid_argument("Trajectory: frames must share one shape");
  params.validate();
}

void Standardizer::validate() const {
  if (mean.size() != std.size())
    throw std::invalid_argument("Standardizer: mean/std length mismatch");
  if (mean.empty()) throw std::invalid_argument("Standardizer: empty");
  for (double s : std)
    if (!(s > 0.0)) throw std::invalid_argument("Standardizer: non-positive std");
  for (double m : mean)
    if (!std::isfinite(m)) throw std::invalid_argument("Standardizer: non-finite mean");
}

namespace {
void check_channels(const Field& field, const Standardizer& s) {
  s.validate();
  if (field.channels != s.channels())
    throw std::invalid_argument("standardize: channel count mismatch");
}
}  // namespace

Field standardize(const Field& field, const Standardizer& s) {
  check_channels(field, s);
  Field out = field;
  const std::size_t plane = static_cast<std::size_t>(field.height) * field.width;
  for (int c = 0; c < field.channels; ++c) {
    const double m = s.mean[c], inv = 1.0 / s.std[c];
    double* p = out.data.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
  }
  return out;
}

Field destandardize(const Field& field, const Standardizer& s) {
  check_channels(field, s);
  Field out = field;
  const std::size_t plane = static_cast<std::size_t>(field.height) * field.width;
  for (int c = 0; c < field.channels; ++c) {
    const double m = s.mean[c], sd = s.std[c];
    double* p = out.data.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = p[i] * sd + m;
  }
  return out;
}

Standardizer fit_standardizer(const std::vector<const Trajectory*>& trajectories) {
  if (trajectories.empty()) throw std::invalid_argument("fit_standardizer: no data");
  const int C = trajectories.front()->frames.front().channels;
  std::vector<double> sum(C, 0.0);
  std::vector<std::size_t> count(C, 0);
  for (const Trajectory* t : trajectories) {
    for (const Field& f : t->frames) {
      if (f.channels != C) throw std::invalid_argument("fit_standardizer: channel mismatch");
      const std::size_t plane = static_cast<std::size_t>(f.height) * f.width;
      for (int c = 0; c < C; ++c) {
        const double* p = f.data.data() + c * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        sum[c] += acc;
        count[c] += plane;
      }
    }
  }
  Standardizer s;
  s.mean.resize(C);
  s.std.resize(C);
  for (int c = 0; c < C; ++c) s.mean[c] = sum[c] / static_cast<double>(count[c]);

  std::vector<double> sq(C, 0.0);
  for (const Trajectory* t : trajectories) {
    for (const Field& f : t->frames) {
      const std::size_t plane = static_cast<std::size_t>(f.height) * f.width;
      for (int c = 0; c < C; ++c) {
        const double* p = f.data.data() + c * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - s.mean[c];
          acc += d * d;
        }
        sq[c] += acc;
      }
    }
  }
  for (int c = 0; c < C; ++c) {
    s.std[c] = std::sqrt(sq[c] / static_cast<double>(count[c]));
    if (!(s.std[c] > 0.0))
      throw std::invalid_argument("fit_standardizer: degenerate channel (zero variance)");
  }
  return s;
}

}  // namespace wfm
