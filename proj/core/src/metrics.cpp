#include "wfm/metrics.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "wfm/spectral.hpp"

namespace wfm {
namespace {

double spatial_mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double vrmse(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) throw std::invalid_argument("vrmse: shape mismatch");
  const double mu = spatial_mean(u);
  double se = 0.0, var = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    se += d * d;
    const double c = u[i] - mu;
    var += c * c;
  }
  const double n = static_cast<double>(u.size());
  return std::sqrt((se / n) / (var / n + kMetricEpsilon));
}

double crps_fair(std::span<const double> u, std::span<const double> members, int ensemble) {
  if (ensemble < 2) throw std::invalid_argument("crps_fair: needs M >= 2");
  const std::size_t n = u.size();
  if (members.size() != n * static_cast<std::size_t>(ensemble))
    throw std::invalid_argument("crps_fair: member buffer size mismatch");

  double skill = 0.0;
  for (int m = 0; m < ensemble; ++m) {
    const double* vm = members.data() + static_cast<std::size_t>(m) * n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(vm[i] - u[i]);
    skill += acc / static_cast<double>(n);
  }
  skill /= ensemble;

  double spread = 0.0;
  for (int m = 0; m < ensemble; ++m) {
    const double* vm = members.data() + static_cast<std::size_t>(m) * n;
    for (int m2 = m + 1; m2 < ensemble; ++m2) {
      const double* vm2 = members.data() + static_cast<std::size_t>(m2) * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += std::abs(vm[i] - vm2[i]);
      spread += acc / static_cast<double>(n);
    }
  }
  spread /= static_cast<double>(ensemble) * (ensemble - 1);
  return skill - spread;
}

int ring_count(int height, int width) { return std::min(height, width) / 2; }

namespace {

// ring index for DFT bin (ky, kx); -1 when excluded
int ring_of(int ky, int kx, int height, int width) {
  const int sy = ky <= height / 2 ? ky : ky - height;
  const int sx = kx <= width / 2 ? kx : kx - width;
  const double fy = static_cast<double>(sy) / height;
  const double fx = static_cast<double>(sx) / width;
  const int r = static_cast<int>(std::llround(std::min(height, width) * std::hypot(fx, fy)));
  if (r < 1 || r > ring_count(height, width)) return -1;
  return r;
}

struct RingAccum {
  std::vector<double> sum;
  std::vector<int> count;
  explicit RingAccum(int rings) : sum(rings, 0.0), count(rings, 0) {}
  void add(int ring, double v) {
    sum[ring - 1] += v;
    ++count[ring - 1];
  }
  std::vector<double> means() const {
    std::vector<double> out(sum.size(), 0.0);
    for (std::size_t i = 0; i < sum.size(); ++i)
      if (count[i] > 0) out[i] = sum[i] / count[i];
    return out;
  }
};

}  // namespace

std::vector<double> radial_psd(std::span<const double> field, int height, int width) {
  if (height < 4 || width < 4) throw std::invalid_argument("radial_psd: grid too small");
  if (field.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("radial_psd: size mismatch");
  const std::vector<Complex> spec =
      dft2(std::vector<double>(field.begin(), field.end()), height, width);
  RingAccum acc(ring_count(height, width));
  for (int ky = 0; ky < height; ++ky)
    for (int kx = 0; kx < width; ++kx) {
      const int r = ring_of(ky, kx, height, width);
      if (r > 0) acc.add(r, std::norm(spec[static_cast<std::size_t>(ky) * width + kx]));
    }
  return acc.means();
}

CoherenceTable coherence(std::span<const double> u, std::span<const double> v, int height,
                         int width) {
  if (u.size() != v.size() || u.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("coherence: shape mismatch");
  const std::vector<Complex> su = dft2(std::vector<double>(u.begin(), u.end()), height, width);
  const std::vector<Complex> sv = dft2(std::vector<double>(v.begin(), v.end()), height, width);

  const int rings = ring_count(height, width);
  RingAccum pu(rings), pv(rings), cross(rings);
  for (int ky = 0; ky < height; ++ky)
    for (int kx = 0; kx < width; ++kx) {
      const int r = ring_of(ky, kx, height, width);
      if (r <= 0) continue;
      const std::size_t i = static_cast<std::size_t>(ky) * width + kx;
      pu.add(r, std::norm(su[i]));
      pv.add(r, std::norm(sv[i]));
      cross.add(r, std::abs(su[i] * std::conj(sv[i])));
    }

  const std::vector<double> mu = pu.means(), mv = pv.means(), mc = cross.means();
  CoherenceTable out;
  out.gamma.resize(rings);
  for (int r = 0; r < rings; ++r) {
    const double g = (mc[r] + kMetricEpsilon) / (std::sqrt(mu[r] * mv[r]) + kMetricEpsilon);
    out.max_preclamp_excess = std::max(out.max_preclamp_excess, g - 1.0);
    out.gamma[r] = std::min(1.0, std::max(0.0, g));
  }
  return out;
}

void BandSpec::validate(int rings) const {
  for (int b = 0; b < 3; ++b) {
    if (lo[b] > hi[b]) throw std::invalid_argument("BandSpec: empty band");
    if (lo[b] < 1 || hi[b] > rings) throw std::invalid_argument("BandSpec: band out of range");
  }
  if (lo[0] != 1 || hi[2] != rings || lo[1] != hi[0] + 1 || lo[2] != hi[1] + 1)
    throw std::invalid_argument("BandSpec: bands must partition (0, k_max]");
}

BandSpec make_log_bands(int rings) {
  if (rings < 3) throw std::invalid_argument("make_log_bands: need at least 3 rings");
  // edges at rings^(1/3) and rings^(2/3); each band gets the rings whose
  // log falls in its third
  const double e1 = std::pow(static_cast<double>(rings), 1.0 / 3.0);
  const double e2 = std::pow(static_cast<double>(rings), 2.0 / 3.0);
  BandSpec b;
  int c1 = static_cast<int>(std::floor(e1));
  int c2 = static_cast<int>(std::floor(e2));
  c1 = std::max(1, std::min(c1, rings - 2));
  c2 = std::max(c1 + 1, std::min(c2, rings - 1));
  b.lo = {1, c1 + 1, c2 + 1};
  b.hi = {c1, c2, rings};
  b.validate(rings);
  return b;
}

std::array<double, 3> band_rmse_from_table(std::span<const double> gamma, const BandSpec& bands) {
  bands.validate(static_cast<int>(gamma.size()));
  std::array<double, 3> out{};
  for (int b = 0; b < 3; ++b) {
    double acc = 0.0;
    for (int r = bands.lo[b]; r <= bands.hi[b]; ++r) {
      const double d = 1.0 - gamma[r - 1];
      acc += d * d;
    }
    out[b] = std::sqrt(acc / (bands.hi[b] - bands.lo[b] + 1));
  }
  return out;
}

std::array<double, 3> coherence_band_rmse(std::span<const double> u, std::span<const double> v,
                                          int height, int width, const BandSpec& bands) {
  const CoherenceTable t = coherence(u, v, height, width);
  return band_rmse_from_table(t.gamma, bands);
}

std::string Window::tag() const { return std::to_string(lo) + ":" + std::to_string(hi); }

double MetricsReport::window_mean(const std::string& metric, const Window& w, int channel,
                                  int band) const {
  if (w.lo < 1 || w.hi > steps_t || w.lo > w.hi)
    throw std::invalid_argument("MetricsReport: window out of range");
  double acc = 0.0;
  for (int t = w.lo - 1; t < w.hi; ++t) {
    if (metric == "vrmse") acc += vrmse_at(t, channel);
    else if (metric == "crps") acc += crps_at(t, channel);
    else if (metric == "coherence_rmse") acc += coherence_at(t, channel, band);
    else throw std::invalid_argument("MetricsReport: unknown metric " + metric);
  }
  return acc / (w.hi - w.lo + 1);
}

namespace {
const char* kBandNames[3] = {"low", "mid", "high"};
}

void MetricsReport::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("MetricsReport: cannot write " + path);
  os << "metric,channel,index,value\n";
  os.precision(17);
  for (int t = 0; t < steps_t; ++t)
    for (int c = 0; c < channels; ++c)
      os << "vrmse," << c << ",t=" << (t + 1) << "," << vrmse_at(t, c) << "\n";
  for (int t = 0; t < steps_t; ++t)
    for (int c = 0; c < channels; ++c)
      os << "crps," << c << ",t=" << (t + 1) << "," << crps_at(t, c) << "\n";
  for (int t = 0; t < steps_t; ++t)
    for (int c = 0; c < channels; ++c)
      for (int b = 0; b < 3; ++b)
        os << "coherence_rmse," << c << ",t=" << (t + 1) << ":band=" << kBandNames[b] << ","
           << coherence_at(t, c, b) << "\n";
  for (const Window& w : windows) {
    for (int c = 0; c < channels; ++c) {
      os << "vrmse," << c << ",win=" << w.tag() << "," << window_mean("vrmse", w, c) << "\n";
      os << "crps," << c << ",win=" << w.tag() << "," << window_mean("crps", w, c) << "\n";
      for (int b = 0; b < 3; ++b)
        os << "coherence_rmse," << c << ",win=" << w.tag() << ":band=" << kBandNames[b] << ","
           << window_mean("coherence_rmse", w, c, b) << "\n";
    }
  }
}

void MetricsReport::write_json(const std::string& path) const {
  nlohmann::json j;
  j["steps"] = steps_t;
  j["channels"] = channels;
  j["vrmse"] = vrmse_tc;
  j["crps"] = crps_tc;
  j["coherence_rmse"] = coherence_tcb;
  j["bands"] = {kBandNames[0], kBandNames[1], kBandNames[2]};
  nlohmann::json wins = nlohmann::json::array();
  for (const Window& w : windows) {
    nlohmann::json entry;
    entry["window"] = w.tag();
    nlohmann::json per_metric;
    for (const char* metric : {"vrmse", "crps"}) {
      nlohmann::json vals = nlohmann::json::array();
      for (int c = 0; c < channels; ++c) vals.push_back(window_mean(metric, w, c));
      per_metric[metric] = vals;
    }
    nlohmann::json coh = nlohmann::json::array();
    for (int b = 0; b < 3; ++b) {
      nlohmann::json vals = nlohmann::json::array();
      for (int c = 0; c < channels; ++c) vals.push_back(window_mean("coherence_rmse", w, c, b));
      coh.push_back(vals);
    }
    per_metric["coherence_rmse"] = coh;
    entry["aggregates"] = per_metric;
    wins.push_back(entry);
  }
  j["windows"] = wins;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("MetricsReport: cannot write " + path);
  os << j.dump(2) << "\n";
}

MetricsReport evaluate(const EnsembleForecast& forecast, const EvaluateOptions& options) {
  forecast.validate();
  if (forecast.truth.empty()) throw std::invalid_argument("evaluate: forecast has no truth");
  const int T = forecast.steps_t, C = forecast.channels, M = forecast.members_m;
  const int H = forecast.height, W = forecast.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  MetricsReport rep;
  rep.steps_t = T;
  rep.channels = C;
  rep.windows = options.windows;
  for (const Window& w : rep.windows)
    if (w.lo < 1 || w.hi > T || w.lo > w.hi)
      throw std::invalid_argument("evaluate: window out of range");
  rep.vrmse_tc.assign(static_cast<std::size_t>(T) * C, 0.0);
  rep.crps_tc.assign(static_cast<std::size_t>(T) * C, 0.0);
  rep.coherence_tcb.assign(static_cast<std::size_t>(T) * C * 3, 0.0);

  const BandSpec bands = make_log_bands(ring_count(H, W));
  std::vector<double> mean(plane), member_stack(static_cast<std::size_t>(M) * plane);

  for (int t = 0; t < T; ++t) {
    for (int c = 0; c < C; ++c) {
      const double* u = forecast.truth[t].data.data() + c * plane;
      // gather members for this (t, c) and their mean
      std::fill(mean.begin(), mean.end(), 0.0);
      for (int m = 0; m < M; ++m) {
        const double* src = forecast.member_frame(m, t) + c * plane;
        double* dst = member_stack.data() + static_cast<std::size_t>(m) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          dst[i] = src[i];
          mean[i] += src[i];
        }
      }
      for (std::size_t i = 0; i < plane; ++i) mean[i] /= M;

      rep.vrmse_at(t, c) = vrmse(std::span<const double>(u, plane), mean);
      // fair CRPS is undefined at M=1; no MAE fallback
      rep.crps_at(t, c) = crps_fair(std::span<const double>(u, plane), member_stack, M);

      if (options.coherence_per_member) {
        std::vector<double> gamma_sum;
        for (int m = 0; m < M; ++m) {
          const CoherenceTable tab = coherence(
              std::span<const double>(u, plane),
              std::span<const double>(member_stack.data() + static_cast<std::size_t>(m) * plane,
                                      plane),
              H, W);
          if (gamma_sum.empty()) gamma_sum.assign(tab.gamma.size(), 0.0);
          for (std::size_t i = 0; i < tab.gamma.size(); ++i) gamma_sum[i] += tab.gamma[i];
        }
        for (double& g : gamma_sum) g /= M;
        const std::array<double, 3> rmse = band_rmse_from_table(gamma_sum, bands);
        for (int b = 0; b < 3; ++b) rep.coherence_at(t, c, b) = rmse[b];
      } else {
        const std::array<double, 3> rmse =
            coherence_band_rmse(std::span<const double>(u, plane), mean, H, W, bands);
        for (int b = 0; b < 3; ++b) rep.coherence_at(t, c, b) = rmse[b];
      }
    }
  }
  return rep;
}

}  // namespace wfm
