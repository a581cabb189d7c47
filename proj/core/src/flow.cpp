#include "wfm/flow.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

namespace wfm {

void SamplerConfig::validate() const {
  if (n_steps < 1) throw std::invalid_argument("SamplerConfig: n_steps must be >= 1");
  if (ensemble < 1) throw std::invalid_argument("SamplerConfig: ensemble must be >= 1");
}

WaveletPyramid sample_noise(const WaveletPyramid& shape_of, const PhiloxRng& base) {
  WaveletPyramid out = WaveletPyramid::zeros_like_field(
      shape_of.channels, shape_of.base_height, shape_of.base_width, shape_of.levels,
      shape_of.filter_order);
  for (int j = 1; j <= out.levels; ++j) {
    PhiloxRng rng = base.split(j);
    for (double& v : out.scales[j - 1]) v = rng.next_normal();
  }
  return out;
}

namespace {
void check_shapes(const WaveletPyramid& a, const WaveletPyramid& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": pyramid shape mismatch");
}
}  // namespace

WaveletPyramid interpolate(const WaveletPyramid& target, const WaveletPyramid& noise, double tau) {
  check_shapes(target, noise, "interpolate");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("interpolate: tau out of [0,1]");
  WaveletPyramid out = target;
  for (int j = 0; j < out.levels; ++j) {
    const std::vector<double>& t = target.scales[j];
    const std::vector<double>& n = noise.scales[j];
    std::vector<double>& o = out.scales[j];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = tau * t[i] + (1.0 - tau) * n[i];
  }
  return out;
}

WaveletPyramid target_velocity(const WaveletPyramid& target, const WaveletPyramid& noise) {
  check_shapes(target, noise, "target_velocity");
  WaveletPyramid out = target;
  for (int j = 0; j < out.levels; ++j) {
    const std::vector<double>& n = noise.scales[j];
    std::vector<double>& o = out.scales[j];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= n[i];
  }
  return out;
}

FlowSample make_flow_sample(const WaveletPyramid& target, double tau,
                            const PhiloxRng& noise_base) {
  FlowSample s;
  s.tau = tau;
  s.target = target;
  s.noise = sample_noise(target, noise_base);
  s.interpolant = interpolate(target, s.noise, tau);
  s.velocity = target_velocity(target, s.noise);
  return s;
}

namespace {

struct SliceStats {
  double mse = 0.0;       // <(pred - target)^2>
  double variance = 0.0;  // <(target - <target>)^2>
};

SliceStats slice_stats(const double* pred, const double* target, std::size_t n) {
  double se = 0.0, sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred[i] - target[i];
    se += d * d;
    sum += target[i];
    sq += target[i] * target[i];
  }
  const double inv = 1.0 / static_cast<double>(n);
  const double mean = sum * inv;
  return {se * inv, sq * inv - mean * mean};
}

}  // namespace

double scale_loss(std::span<const double> pred, std::span<const double> target, int batch,
                  int channels, int height, int width, bool per_subband) {
  const std::size_t spatial = static_cast<std::size_t>(height) * width;
  const std::size_t slice = 4 * spatial;
  const std::size_t total = static_cast<std::size_t>(batch) * channels * slice;
  if (pred.size() != total || target.size() != total)
    throw std::invalid_argument("scale_loss: shape mismatch");

  double acc = 0.0;
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * slice;
      if (per_subband) {
        double band_acc = 0.0;
        for (int s = 0; s < 4; ++s) {
          const SliceStats st =
              slice_stats(pred.data() + off + s * spatial, target.data() + off + s * spatial, spatial);
          band_acc += st.mse / (st.variance + kLossEpsilon);
        }
        acc += band_acc / 4.0;
      } else {
        const SliceStats st = slice_stats(pred.data() + off, target.data() + off, slice);
        acc += st.mse / (st.variance + kLossEpsilon);
      }
    }
  }
  return acc / (static_cast<double>(batch) * channels);
}

void scale_loss_grad(std::span<const double> pred, std::span<const double> target, int batch,
                     int channels, int height, int width, double outer_weight,
                     std::span<double> grad, bool per_subband) {
  const std::size_t spatial = static_cast<std::size_t>(height) * width;
  const std::size_t slice = 4 * spatial;
  const std::size_t total = static_cast<std::size_t>(batch) * channels * slice;
  if (pred.size() != total || target.size() != total || grad.size() != total)
    throw std::invalid_argument("scale_loss_grad: shape mismatch");

  const double norm = outer_weight / (static_cast<double>(batch) * channels);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * slice;
      if (per_subband) {
        for (int s = 0; s < 4; ++s) {
          const std::size_t boff = off + s * spatial;
          const SliceStats st = slice_stats(pred.data() + boff, target.data() + boff, spatial);
          const double scale =
              norm * 0.25 * 2.0 / (static_cast<double>(spatial) * (st.variance + kLossEpsilon));
          for (std::size_t i = 0; i < spatial; ++i)
            grad[boff + i] += scale * (pred[boff + i] - target[boff + i]);
        }
      } else {
        const SliceStats st = slice_stats(pred.data() + off, target.data() + off, slice);
        const double scale =
            norm * 2.0 / (static_cast<double>(slice) * (st.variance + kLossEpsilon));
        for (std::size_t i = 0; i < slice; ++i)
          grad[off + i] += scale * (pred[off + i] - target[off + i]);
      }
    }
  }
}

LossBreakdown total_loss(const std::vector<double>& per_scale, const std::vector<double>& weights) {
  if (per_scale.empty()) throw std::invalid_argument("total_loss: no scales");
  if (per_scale.size() != weights.size())
    throw std::invalid_argument("total_loss: weights length mismatch");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("total_loss: negative weight");
    wsum += w;
  }
  if (!(wsum > 0.0)) throw std::invalid_argument("total_loss: all-zero weights");

  LossBreakdown out;
  out.per_scale = per_scale;
  out.weights = weights;
  double acc = 0.0;
  for (std::size_t j = 0; j < per_scale.size(); ++j) acc += weights[j] * per_scale[j];
  out.total = acc / wsum;
  return out;
}

WaveletPyramid euler_sample(const VelocityField& model, const WaveletPyramid& current,
                            const ParamVector& kappa, const std::vector<Field>& context,
                            int n_steps, const PhiloxRng& noise_base) {
  if (n_steps < 1) throw std::invalid_argument("euler_sample: n_steps must be >= 1");
  WaveletPyramid w = sample_noise(current, noise_base);
  const double dtau = 1.0 / n_steps;
  for (int n = 0; n < n_steps; ++n) {
    const double tau = static_cast<double>(n) / n_steps;
    WaveletPyramid u = model.velocity(current, w, tau, kappa, context);
    check_shapes(u, w, "euler_sample");
    for (int j = 0; j < w.levels; ++j) {
      const std::vector<double>& uj = u.scales[j];
      std::vector<double>& wj = w.scales[j];
      for (std::size_t i = 0; i < wj.size(); ++i) {
        if (!std::isfinite(uj[i]))
          throw std::runtime_error("euler_sample: non-finite velocity at step " +
                                   std::to_string(n) + ", scale " + std::to_string(j + 1));
        wj[i] += dtau * uj[i];
      }
    }
  }
  return w;
}

EnsembleForecast rollout(const VelocityField& model, const std::vector<Field>& initial,
                         const ParamVector& kappa, int steps, const SamplerConfig& cfg,
                         const FilterBank& bank, int levels, const Standardizer& standardizer) {
  cfg.validate();
  if (initial.empty()) throw std::invalid_argument("rollout: no initial frames");
  if (steps < 0) throw std::invalid_argument("rollout: negative step count");
  const Field& x0 = initial.back();

  EnsembleForecast out;
  out.members_m = cfg.ensemble;
  out.steps_t = steps;
  out.channels = x0.channels;
  out.height = x0.height;
  out.width = x0.width;
  out.members.assign(static_cast<std::size_t>(cfg.ensemble) * steps * out.frame_size(), 0.0);
  out.failure_steps.assign(cfg.ensemble, -1);
  out.seed = cfg.seed;
  out.sampler_steps = cfg.n_steps;
  out.bank_name = bank.name();
  out.levels = levels;
  if (steps == 0) return out;

  const PhiloxRng root(cfg.seed);
  const int L = static_cast<int>(initial.size()) - 1;

  auto run_member = [&](int m) {
    std::vector<Field> window = initial;  // oldest first, last = current
    const PhiloxRng member_rng = root.split(m);
    for (int t = 0; t < steps; ++t) {
      const WaveletPyramid w_t = dwt_multiscale(window.back(), bank, levels);
      std::vector<Field> context(window.begin(), window.end() - 1);
      WaveletPyramid w_next;
      try {
        w_next = euler_sample(model, w_t, kappa, context, cfg.n_steps, member_rng.split(t));
      } catch (const std::runtime_error&) {
        out.failure_steps[m] = t;
        return;
      }
      Field x_next = idwt_multiscale(w_next, bank);
      if (!x_next.all_finite()) {
        out.failure_steps[m] = t;
        return;
      }
      const Field physical = destandardize(x_next, standardizer);
      std::copy(physical.data.begin(), physical.data.end(), out.member_frame(m, t));
      // shift the context window
      if (L > 0) window.erase(window.begin());
      else window.clear();
      window.push_back(std::move(x_next));
    }
  };

  // members are embarrassingly parallel and write disjoint slices
  const unsigned hw = std::thread::hardware_concurrency();
  const int n_threads = static_cast<int>(std::min<unsigned>(hw ? hw : 1, cfg.ensemble));
  if (n_threads <= 1 || cfg.ensemble == 1) {
    for (int m = 0; m < cfg.ensemble; ++m) run_member(m);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&, t] {
        for (int m = t; m < cfg.ensemble; m += n_threads) run_member(m);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace wfm
