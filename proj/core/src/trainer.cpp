#include "wfm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace wfm {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw std::invalid_argument("TrainConfig: warmup must be in [0, epochs)");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (clip_norm <= 0.0) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
}

OptState OptState::init(const ParamStore& params, const TrainConfig& cfg) {
  OptState s;
  s.lr = cfg.lr;
  s.weight_decay = cfg.weight_decay;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.eps = cfg.adam_eps;
  s.m.reserve(params.entries.size());
  s.v.reserve(params.entries.size());
  for (const auto& e : params.entries) {
    s.m.emplace_back(e.value.size(), 0.0);
    s.v.emplace_back(e.value.size(), 0.0);
  }
  return s;
}

void adamw_step(ParamStore& params, const ParamStore& grads, OptState& state) {
  if (params.entries.size() != grads.entries.size() || params.entries.size() != state.m.size())
    throw std::invalid_argument("adamw_step: store shape mismatch");
  for (std::size_t i = 0; i < grads.entries.size(); ++i)
    for (double g : grads.entries[i].value)
      if (!std::isfinite(g))
        throw std::runtime_error("adamw_step: non-finite gradient in " + grads.entries[i].name);

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    auto& theta = params.entries[i].value;
    const auto& g = grads.entries[i].value;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (theta.size() != g.size()) throw std::invalid_argument("adamw_step: tensor size mismatch");
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      theta[k] -= state.lr * (mhat / (std::sqrt(vhat) + state.eps) +
                              state.weight_decay * theta[k]);
    }
  }
}

double clip_global_norm(ParamStore& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& e : grads.entries)
    for (double g : e.value) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& e : grads.entries)
      for (double& g : e.value) g *= scale;
  }
  return norm;
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) throw std::invalid_argument("cosine_lr: epoch out of range");
  if (epoch < cfg.warmup_epochs)
    return cfg.lr * static_cast<double>(epoch) / cfg.warmup_epochs;
  const double progress =
      static_cast<double>(epoch - cfg.warmup_epochs) / (cfg.epochs - cfg.warmup_epochs);
  return cfg.eta_min + 0.5 * (cfg.lr - cfg.eta_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

struct SampleResult {
  std::vector<double> per_scale;  // per-sample partial l_j
  ParamStore grads;               // empty when forward-only
};

std::vector<double> normalized_weights(const TrainConfig& cfg, int levels) {
  std::vector<double> w = cfg.scale_weights;
  if (w.empty()) w.assign(levels, 1.0);
  if (static_cast<int>(w.size()) != levels)
    throw std::invalid_argument("train: scale_weights length != n_scales");
  double sum = 0.0;
  for (double x : w) sum += x;
  if (!(sum > 0.0)) throw std::invalid_argument("train: all-zero scale weights");
  for (double& x : w) x /= sum;
  return w;
}

// Forward (and optionally backward) for one sample.
SampleResult run_sample(const VelocityNet& net, const ParamStore& params, const Sample& s,
                        const FilterBank& bank, const TrainConfig& cfg,
                        const std::vector<double>& weights, double tau,
                        const PhiloxRng& noise_base, bool with_grads, double inv_batch) {
  const NetConfig& nc = net.config();
  const int J = nc.n_scales;
  const int C = nc.channels;

  const WaveletPyramid pyr_t = dwt_multiscale(*s.current, bank, J);
  const WaveletPyramid pyr_next = dwt_multiscale(*s.target, bank, J);
  const WaveletPyramid noise = sample_noise(pyr_next, noise_base);
  const WaveletPyramid interp = interpolate(pyr_next, noise, tau);
  const WaveletPyramid vel = target_velocity(pyr_next, noise);

  NetInputs in;
  in.z.reserve(J);
  for (int j = 1; j <= J; ++j) {
    Grid z(1, nc.stem_channels(), pyr_t.scale_height(j), pyr_t.scale_width(j));
    const std::size_t half = pyr_t.scale_size(j);
    fold_scale(pyr_t, j, z.v.data());
    fold_scale(interp, j, z.v.data() + half);
    in.z.push_back(std::move(z));
  }
  in.tau = {tau};
  in.kappa = Vecs(1, nc.kappa_dim);
  if (static_cast<int>(s.kappa->values.size()) != nc.kappa_dim)
    throw std::invalid_argument("train: kappa length mismatch");
  std::copy(s.kappa->values.begin(), s.kappa->values.end(), in.kappa.v.begin());
  if (static_cast<int>(s.context.size()) != nc.context_len)
    throw std::invalid_argument("train: context length mismatch");
  for (const Field* f : s.context) {
    Grid g(1, f->channels, f->height, f->width);
    std::copy(f->data.begin(), f->data.end(), g.v.begin());
    in.context.push_back(std::move(g));
  }

  Tape tape = net.make_tape();
  const Vecs cond = net.embed_condition(in, params, tape);
  const std::vector<Grid> out = net.forward(in.z, cond, params, tape);

  SampleResult res;
  res.per_scale.resize(J);
  std::vector<Grid> grad_out;
  if (with_grads) grad_out.resize(J);
  for (int j = 1; j <= J; ++j) {
    const std::vector<double>& target = vel.scales[j - 1];
    const std::vector<double>& pred = out[j - 1].v;
    res.per_scale[j - 1] = scale_loss(pred, target, 1, C, pyr_t.scale_height(j),
                                      pyr_t.scale_width(j), cfg.per_subband_loss);
    if (with_grads) {
      Grid g(1, nc.head_channels(), pyr_t.scale_height(j), pyr_t.scale_width(j));
      scale_loss_grad(pred, target, 1, C, pyr_t.scale_height(j), pyr_t.scale_width(j),
                      weights[j - 1] * inv_batch, g.v, cfg.per_subband_loss);
      grad_out[j - 1] = std::move(g);
    }
  }
  if (with_grads) {
    res.grads = net.make_params();
    const VelocityNet::BackwardResult back = net.backward(grad_out, params, tape, res.grads);
    net.embed_backward(back.grad_cond, params, tape, res.grads);
  }
  return res;
}

// Deterministic fan-out over samples; results merged in ascending order.
std::vector<SampleResult> run_batch(const VelocityNet& net, const ParamStore& params,
                                    const std::vector<Sample>& batch, const FilterBank& bank,
                                    const TrainConfig& cfg, const std::vector<double>& weights,
                                    const std::vector<double>& taus,
                                    const std::vector<PhiloxRng>& noise_bases, bool with_grads) {
  const int B = static_cast<int>(batch.size());
  std::vector<SampleResult> results(B);
  const unsigned hw = std::thread::hardware_concurrency();
  int n_threads = cfg.n_threads > 0 ? cfg.n_threads : static_cast<int>(hw ? hw : 1);
  n_threads = std::min(n_threads, B);

  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&](int first) {
    for (int b = first; b < B; b += n_threads) {
      try {
        results[b] = run_sample(net, params, batch[b], bank, cfg, weights, taus[b],
                                noise_bases[b], with_grads, 1.0 / B);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (n_threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return results;
}

LossBreakdown reduce_losses(const std::vector<SampleResult>& results, const TrainConfig& cfg,
                            int levels) {
  std::vector<double> weights = cfg.scale_weights;
  if (weights.empty()) weights.assign(levels, 1.0);
  std::vector<double> per_scale(levels, 0.0);
  for (int j = 0; j < levels; ++j) {
    for (const SampleResult& r : results) per_scale[j] += r.per_scale[j];
    per_scale[j] /= static_cast<double>(results.size());
    if (!std::isfinite(per_scale[j]))
      throw std::runtime_error("train_step: non-finite loss at scale " + std::to_string(j + 1));
  }
  return total_loss(per_scale, weights);
}

}  // namespace

LossBreakdown train_step(const VelocityNet& net, ParamStore& params, OptState& opt,
                         const std::vector<Sample>& batch, const FilterBank& bank,
                         const TrainConfig& cfg, const PhiloxRng& step_rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const int J = net.config().n_scales;
  const std::vector<double> weights = normalized_weights(cfg, J);

  const int B = static_cast<int>(batch.size());
  std::vector<double> taus(B);
  std::vector<PhiloxRng> noise_bases;
  noise_bases.reserve(B);
  for (int b = 0; b < B; ++b) {
    PhiloxRng srng = step_rng.split(b);
    taus[b] = srng.next_uniform();  // uniform on [0, 1)
    noise_bases.push_back(srng.split(1));
  }

  const std::vector<SampleResult> results =
      run_batch(net, params, batch, bank, cfg, weights, taus, noise_bases, true);
  const LossBreakdown loss = reduce_losses(results, cfg, J);

  ParamStore grads = net.make_params();
  for (const SampleResult& r : results)
    for (std::size_t i = 0; i < grads.entries.size(); ++i) {
      const auto& src = r.grads.entries[i].value;
      auto& dst = grads.entries[i].value;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  clip_global_norm(grads, cfg.clip_norm);
  adamw_step(params, grads, opt);
  return loss;
}

LossBreakdown eval_loss(const VelocityNet& net, const ParamStore& params,
                        const std::vector<Sample>& batch, const FilterBank& bank,
                        const TrainConfig& cfg, const std::vector<double>& taus,
                        const std::vector<PhiloxRng>& noise_bases) {
  if (batch.empty()) throw std::invalid_argument("eval_loss: empty batch");
  const int J = net.config().n_scales;
  const std::vector<double> weights = normalized_weights(cfg, J);
  const std::vector<SampleResult> results =
      run_batch(net, params, batch, bank, cfg, weights, taus, noise_bases, false);
  return reduce_losses(results, cfg, J);
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

namespace {

struct WindowRef {
  int traj = 0;
  int t = 0;  // current-state index; target is t+1
};

std::vector<WindowRef> list_windows(const Dataset& d, const std::vector<int>& ids, int context) {
  std::vector<WindowRef> out;
  for (int id : ids) {
    const int T = static_cast<int>(d.trajectories[id].frames.size());
    for (int t = context; t + 1 < T; ++t) out.push_back({id, t});
  }
  return out;
}

Sample make_sample(const std::vector<std::vector<Field>>& frames, const Dataset& d,
                   const WindowRef& w, int context) {
  Sample s;
  s.current = &frames[w.traj][w.t];
  s.target = &frames[w.traj][w.t + 1];
  for (int l = context; l >= 1; --l) s.context.push_back(&frames[w.traj][w.t - l]);
  s.kappa = &d.trajectories[w.traj].params;
  return s;
}

void shuffle_windows(std::vector<WindowRef>& w, PhiloxRng rng) {
  for (std::size_t i = w.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_uniform() * static_cast<double>(i));
    std::swap(w[i - 1], w[std::min(j, i - 1)]);
  }
}

void write_train_config(const std::string& path, const NetConfig& nc, const TrainConfig& tc,
                        const FilterBank& bank) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("fit: cannot write " + path);
  os.precision(17);
  os << "wavelet " << bank.name() << "\n";
  os << "n_scales " << nc.n_scales << "\n"
     << "n_levels " << nc.n_levels << "\n"
     << "init_dim " << nc.init_dim << "\n"
     << "blocks_per_level " << nc.blocks_per_level << "\n"
     << "embed_dim " << nc.embed_dim << "\n"
     << "context_len " << nc.context_len << "\n";
  os << "epochs " << tc.epochs << "\n"
     << "warmup_epochs " << tc.warmup_epochs << "\n"
     << "batch_size " << tc.batch_size << "\n"
     << "lr " << tc.lr << "\n"
     << "weight_decay " << tc.weight_decay << "\n"
     << "beta1 " << tc.beta1 << "\n"
     << "beta2 " << tc.beta2 << "\n"
     << "clip_norm " << tc.clip_norm << "\n"
     << "eta_min " << tc.eta_min << "\n"
     << "seed " << tc.seed << "\n"
     << "loss_epsilon " << kLossEpsilon << "\n";
  os << "scale_weights";
  if (tc.scale_weights.empty())
    for (int j = 0; j < nc.n_scales; ++j) os << " 1";
  else
    for (double w : tc.scale_weights) os << " " << w;
  os << "\n";
}

}  // namespace

FitResult fit(const Dataset& dataset, const NetConfig& net_config, const TrainConfig& cfg,
              const FilterBank& bank, const std::string& out_dir) {
  cfg.validate();
  net_config.validate();
  if (dataset.trajectories.empty()) throw std::invalid_argument("fit: empty dataset");
  if (dataset.train_ids.empty() || dataset.val_ids.empty())
    throw std::invalid_argument("fit: dataset needs train and val splits");

  const int L = net_config.context_len;
  std::filesystem::create_directories(out_dir);
  write_train_config(out_dir + "/train_config.txt", net_config, cfg, bank);

  // standardized frames, computed once
  std::vector<std::vector<Field>> frames(dataset.trajectories.size());
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    frames[i].reserve(dataset.trajectories[i].frames.size());
    for (const Field& f : dataset.trajectories[i].frames)
      frames[i].push_back(standardize(f, dataset.standardizer));
  }

  std::vector<WindowRef> train_windows = list_windows(dataset, dataset.train_ids, L);
  const std::vector<WindowRef> val_windows = list_windows(dataset, dataset.val_ids, L);
  if (train_windows.empty() || val_windows.empty())
    throw std::invalid_argument("fit: trajectories too short for the context window");

  const VelocityNet net(net_config);
  ParamStore params = net.init_params(cfg.seed);
  OptState opt = OptState::init(params, cfg);

  const PhiloxRng root(cfg.seed);
  const PhiloxRng train_rng = root.split(1);
  const PhiloxRng val_rng = root.split(2);
  const PhiloxRng shuffle_rng = root.split(3);

  // frozen validation draws, one per val window
  std::vector<double> val_taus(val_windows.size());
  std::vector<PhiloxRng> val_noise;
  val_noise.reserve(val_windows.size());
  for (std::size_t i = 0; i < val_windows.size(); ++i) {
    PhiloxRng r = val_rng.split(i);
    val_taus[i] = r.next_uniform();
    val_noise.push_back(r.split(1));
  }
  std::vector<Sample> val_batch;
  val_batch.reserve(val_windows.size());
  for (const WindowRef& w : val_windows) val_batch.push_back(make_sample(frames, dataset, w, L));

  FitResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  long global_step = 0;
  bool first_loss_recorded = false;

  std::ofstream csv(out_dir + "/loss_curve.csv");
  if (!csv) throw std::runtime_error("fit: cannot write loss curve CSV");
  csv.precision(17);
  csv << "epoch,lr,train_total,val_total";
  for (int j = 1; j <= net_config.n_scales; ++j) csv << ",train_l" << j;
  csv << "\n";

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.lr = cosine_lr(epoch, cfg);
    shuffle_windows(train_windows, shuffle_rng.split(epoch));

    double train_acc = 0.0;
    std::vector<double> scale_acc(net_config.n_scales, 0.0);
    long batches = 0;
    for (std::size_t pos = 0; pos < train_windows.size(); pos += cfg.batch_size) {
      if (cfg.max_steps > 0 && global_step >= cfg.max_steps) break;
      const std::size_t end = std::min(pos + cfg.batch_size, train_windows.size());
      std::vector<Sample> batch;
      batch.reserve(end - pos);
      for (std::size_t i = pos; i < end; ++i)
        batch.push_back(make_sample(frames, dataset, train_windows[i], L));
      const LossBreakdown loss =
          train_step(net, params, opt, batch, bank, cfg, train_rng.split(global_step));
      if (!first_loss_recorded) {
        result.initial_train = loss.total;
        first_loss_recorded = true;
      }
      train_acc += loss.total;
      for (int j = 0; j < net_config.n_scales; ++j) scale_acc[j] += loss.per_scale[j];
      ++global_step;
      ++batches;
    }
    if (batches == 0) break;

    const LossBreakdown val =
        eval_loss(net, params, val_batch, bank, cfg, val_taus, val_noise);

    EpochRow row;
    row.epoch = epoch;
    row.lr = opt.lr;
    row.train_total = train_acc / static_cast<double>(batches);
    row.val_total = val.total;
    for (double s : scale_acc) row.train_per_scale.push_back(s / static_cast<double>(batches));
    result.curve.push_back(row);

    csv << epoch << "," << row.lr << "," << row.train_total << "," << row.val_total;
    for (double s : row.train_per_scale) csv << "," << s;
    csv << "\n";
    csv.flush();

    if (val.total < result.best_val) {
      result.best_val = val.total;
      result.best_epoch = epoch;
      save_checkpoint(out_dir + "/best", net_config, params, cfg.seed, global_step, bank.name());
    }
    if (cfg.max_steps > 0 && global_step >= cfg.max_steps) break;
  }
  result.steps = global_step;
  save_checkpoint(out_dir + "/final", net_config, params, cfg.seed, global_step, bank.name());
  return result;
}

}  // namespace wfm
