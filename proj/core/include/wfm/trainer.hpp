// Mini-batch flow-matching training in wavelet space: AdamW with
// decoupled weight decay, linear-warmup cosine learning-rate schedule,
// global gradient-norm clipping, and a deterministic epoch loop over
// sliding trajectory windows.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wfm/flow.hpp"
#include "wfm/pdegen.hpp"
#include "wfm/velocity_net.hpp"

namespace wfm {

struct TrainConfig {
  int epochs = 200;
  int warmup_epochs = 20;
  int batch_size = 32;
  double lr = 3e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  double eta_min = 1e-7;
  std::uint64_t seed = 0;
  std::vector<double> scale_weights;  // empty = uniform (lambda_j = 1)
  bool per_subband_loss = false;
  long max_steps = 0;  // optimizer-step cap, 0 = none
  int n_threads = 0;   // 0 = hardware concurrency

  void validate() const;
};

struct OptState {
  double lr = 3e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m;  // first moments, mirroring params
  std::vector<std::vector<double>> v;  // second moments

  static OptState init(const ParamStore& params, const TrainConfig& cfg);
};

// Decoupled-weight-decay Adam with bias correction:
//   theta <- theta - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * theta )
void adamw_step(ParamStore& params, const ParamStore& grads, OptState& state);

// Scales grads so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(ParamStore& grads, double max_norm);

// Linear ramp 0 -> lr over warmup epochs, then cosine annealing to
// eta_min over the remainder.
double cosine_lr(int epoch, const TrainConfig& cfg);

// One training sample: L context frames, current and target states, all
// standardized, plus the trajectory's static parameters.
struct Sample {
  const Field* current = nullptr;
  const Field* target = nullptr;
  std::vector<const Field*> context;  // oldest first
  const ParamVector* kappa = nullptr;
};

// Forward + backward + clip + AdamW over one batch. Fresh (tau, eps)
// per sample from step_rng.split(sample index). Throws on non-finite
// loss, naming the offending scale.
LossBreakdown train_step(const VelocityNet& net, ParamStore& params, OptState& opt,
                         const std::vector<Sample>& batch, const FilterBank& bank,
                         const TrainConfig& cfg, const PhiloxRng& step_rng);

// Forward-only loss over samples with externally fixed (tau, noise-base)
// draws; used for comparable validation curves.
LossBreakdown eval_loss(const VelocityNet& net, const ParamStore& params,
                        const std::vector<Sample>& batch, const FilterBank& bank,
                        const TrainConfig& cfg, const std::vector<double>& taus,
                        const std::vector<PhiloxRng>& noise_bases);

struct EpochRow {
  int epoch = 0;
  double lr = 0.0;
  double train_total = 0.0;
  double val_total = 0.0;
  std::vector<double> train_per_scale;
};

struct FitResult {
  std::vector<EpochRow> curve;
  long steps = 0;
  int best_epoch = -1;
  double best_val = 0.0;
  double initial_train = 0.0;  // first recorded batch loss
};

// Full training run over a dataset: shuffled sliding windows per epoch,
// per-epoch validation with frozen draws, best-checkpoint selection.
// Writes loss_curve.csv, train_config.txt, and checkpoints (best/,
// final/) under out_dir. Deterministic per cfg.seed.
FitResult fit(const Dataset& dataset, const NetConfig& net_config, const TrainConfig& cfg,
              const FilterBank& bank, const std::string& out_dir);

}  // namespace wfm
