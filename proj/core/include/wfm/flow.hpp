// Conditional flow matching in wavelet space: straight-line interpolants
// between scale-matched Gaussian noise and target coefficients, the
// constant target velocity, the variance-normalized multi-scale loss,
// Euler sampling, and autoregressive ensemble rollout.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "wfm/field.hpp"
#include "wfm/forecast.hpp"
#include "wfm/rng.hpp"
#include "wfm/wavelet.hpp"

namespace wfm {

// Stabilizer in the denominator of the per-scale loss.
inline constexpr double kLossEpsilon = 1e-4;

struct FlowSample {
  double tau = 0.0;
  WaveletPyramid noise;
  WaveletPyramid target;
  WaveletPyramid interpolant;
  WaveletPyramid velocity;
};

struct LossBreakdown {
  std::vector<double> per_scale;  // l_j, j = 1..J
  std::vector<double> weights;    // lambda_j
  double total = 0.0;
};

struct SamplerConfig {
  int n_steps = 50;        // N
  int ensemble = 8;        // M
  std::uint64_t seed = 0;

  void validate() const;
};

// I.i.d. standard normal entries at every scale; scale j draws from the
// substream base.split(j) so the result is independent of evaluation
// order.
WaveletPyramid sample_noise(const WaveletPyramid& shape_of, const PhiloxRng& base);

// w_j^tau = tau * target_j + (1 - tau) * noise_j
WaveletPyramid interpolate(const WaveletPyramid& target, const WaveletPyramid& noise, double tau);

// u_j = target_j - noise_j (constant along the path)
WaveletPyramid target_velocity(const WaveletPyramid& target, const WaveletPyramid& noise);

FlowSample make_flow_sample(const WaveletPyramid& target, double tau, const PhiloxRng& noise_base);

// Per-scale loss over batched (B, C, 4, H_j, W_j) tensors:
//   l_j = (1/(BC)) sum_{b,c} <(pred - target)^2> / (var(target) + eps)
// where <.> averages jointly over the (4, H_j, W_j) axes of one (b, c)
// slice. per_subband = true instead averages four per-band ratios.
double scale_loss(std::span<const double> pred, std::span<const double> target, int batch,
                  int channels, int height, int width, bool per_subband = false);

// d(scale_loss)/d(pred), scaled by outer_weight; accumulates into grad.
void scale_loss_grad(std::span<const double> pred, std::span<const double> target, int batch,
                     int channels, int height, int width, double outer_weight,
                     std::span<double> grad, bool per_subband = false);

// total = sum_j lambda_j l_j / sum_j lambda_j
LossBreakdown total_loss(const std::vector<double>& per_scale, const std::vector<double>& weights);

// Velocity field abstraction consumed by the sampler; implementations
// bind whatever parameters they carry (the network adapter lives in
// velocity_net.hpp, oracles live in tests).
struct VelocityField {
  virtual ~VelocityField() = default;
  virtual WaveletPyramid velocity(const WaveletPyramid& current, const WaveletPyramid& state,
                                  double tau, const ParamVector& kappa,
                                  const std::vector<Field>& context) const = 0;
};

// Integrates dw/dtau = u from w(0) = noise with N uniform Euler steps,
// tau_n = n/N. Throws on non-finite velocities.
WaveletPyramid euler_sample(const VelocityField& model, const WaveletPyramid& current,
                            const ParamVector& kappa, const std::vector<Field>& context,
                            int n_steps, const PhiloxRng& noise_base);

// Autoregressive ensemble rollout. `initial` holds L+1 standardized
// frames, oldest first; the last one is the current state. Generated
// frames are destandardized before being stored in the forecast; the
// feedback loop stays in standardized space. Members differ only by
// noise streams split from cfg.seed, so results are independent of any
// parallel schedule. A member that produces non-finite state is aborted
// with its failure step recorded and its remaining frames left zero.
EnsembleForecast rollout(const VelocityField& model, const std::vector<Field>& initial,
                         const ParamVector& kappa, int steps, const SamplerConfig& cfg,
                         const FilterBank& bank, int levels, const Standardizer& standardizer);

}  // namespace wfm
