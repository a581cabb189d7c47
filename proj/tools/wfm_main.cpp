// wfm: command-line front end for the wavelet flow matching pipeline.
//
// Exit codes: 0 success, 1 internal/check failure, 2 usage/config error.
// Every run directory receives config_echo.txt with the fully resolved
// options; re-running with --config <echo file> reproduces the run.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "wfm/flow.hpp"
#include "wfm/metrics.hpp"
#include "wfm/pdegen.hpp"
#include "wfm/rng.hpp"
#include "wfm/trainer.hpp"
#include "wfm/velocity_net.hpp"
#include "wfm/wavelet.hpp"

namespace {

using namespace wfm;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("WFM_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw CLI::ValidationError("WFM_SEED", "not a valid unsigned integer");
    }
  }
  return 0;
}

void echo_config(const std::string& out_dir, const CLI::App& cmd) {
  std::filesystem::create_directories(out_dir);
  std::ofstream os(out_dir + "/config_echo.txt");
  for (const CLI::Option* opt : cmd.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    std::string value = opt->reduced_results().empty() ? opt->get_default_str()
                                                       : opt->reduced_results().front();
    if (value.empty() && opt->count() > 0) value = "true";
    if (value.empty()) continue;
    os << name << "=" << value << "\n";
  }
}

std::vector<Window> parse_windows(const std::string& spec, int max_t) {
  std::vector<Window> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("windows: expected lo:hi, got '" + tok + "'");
    Window w;
    w.lo = std::stoi(tok.substr(0, colon));
    w.hi = std::stoi(tok.substr(colon + 1));
    if (w.lo < 1 || w.hi < w.lo || w.hi > max_t)
      throw std::invalid_argument("windows: " + tok + " out of range for T=" +
                                  std::to_string(max_t));
    out.push_back(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataOpts {
  std::string system = "heat";
  int grid = 32;
  int trajectories = 10;
  int steps = 64;
  std::uint64_t seed = 0;
  double nu = 1e-3;
  double dt = 0.0;  // 0: per-system default
  double feed = 0.030;
  double kill = 0.060;
  double du = 2e-5;
  double dv = 1e-5;
  double train_frac = 0.8;
  std::string out;
};

int run_gen_data(const GenDataOpts& o) {
  if (o.grid < 8 || (o.grid & (o.grid - 1)) != 0)
    throw std::invalid_argument("grid must be divisible by 2^J (power-of-two, >= 8)");
  std::filesystem::create_directories(o.out);
  Dataset d;
  if (o.system == "heat") {
    HeatSpec spec;
    spec.height = spec.width = o.grid;
    spec.nu = o.nu;
    spec.dt = o.dt > 0.0 ? o.dt : 0.01;
    spec.n_steps = o.steps;
    spec.seed = o.seed;
    d = make_heat_dataset(spec, o.trajectories, o.train_frac);
  } else if (o.system == "gray-scott") {
    ReactionDiffusionSpec spec;
    spec.height = spec.width = o.grid;
    spec.feed = o.feed;
    spec.kill = o.kill;
    spec.du = o.du;
    spec.dv = o.dv;
    spec.dt = o.dt > 0.0 ? o.dt : 1.0;
    spec.n_steps = o.steps;
    spec.seed = o.seed;
    d = make_grayscott_dataset(spec, o.trajectories, o.train_frac);
  } else {
    throw std::invalid_argument("unknown system '" + o.system + "' (heat | gray-scott)");
  }
  save_dataset(d, o.out);
  std::cout << "dataset: " << d.system << ", " << d.trajectories.size() << " trajectories ("
            << d.train_ids.size() << " train / " << d.val_ids.size() << " val), grid " << o.grid
            << "x" << o.grid << ", " << o.steps << " steps\n";
  std::cout << "standardizer:";
  for (std::size_t c = 0; c < d.standardizer.mean.size(); ++c)
    std::cout << " ch" << c << " mean=" << d.standardizer.mean[c]
              << " std=" << d.standardizer.std[c];
  std::cout << "\nwritten to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string data;
  std::string out;
  std::string wavelet = "haar";
  int scales = 1;
  int levels = 0;  // 0: same as scales
  int init_dim = 40;
  int blocks = 3;
  int embed_dim = 256;
  int context = 3;
  int epochs = 200;
  int warmup = 20;
  int batch = 32;
  double lr = 3e-4;
  double weight_decay = 1e-2;
  double clip = 1.0;
  double eta_min = 1e-7;
  std::uint64_t seed = 0;
  long max_steps = 0;
  int threads = 0;
  bool per_subband_loss = false;
  std::vector<double> weights;
};

int run_train(const TrainOpts& o) {
  const Dataset data = load_dataset(o.data);
  const Field& f0 = data.trajectories.front().frames.front();

  NetConfig nc;
  nc.n_scales = o.scales;
  nc.n_levels = o.levels > 0 ? o.levels : o.scales;
  nc.init_dim = o.init_dim;
  nc.blocks_per_level = o.blocks;
  nc.embed_dim = o.embed_dim;
  nc.channels = f0.channels;
  nc.context_len = o.context;
  nc.kappa_dim = static_cast<int>(data.trajectories.front().params.values.size());
  nc.validate();  // rejects scales > levels before any work

  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.warmup_epochs = o.warmup;
  tc.batch_size = o.batch;
  tc.lr = o.lr;
  tc.weight_decay = o.weight_decay;
  tc.clip_norm = o.clip;
  tc.eta_min = o.eta_min;
  tc.seed = o.seed;
  tc.max_steps = o.max_steps;
  tc.n_threads = o.threads;
  tc.per_subband_loss = o.per_subband_loss;
  tc.scale_weights = o.weights;
  tc.validate();

  const FilterBank bank = make_filter_bank(o.wavelet);
  const int div = 1 << nc.n_scales;
  if (f0.height % div != 0 || f0.width % div != 0)
    throw std::invalid_argument("grid must be divisible by 2^J");

  const FitResult res = fit(data, nc, tc, bank, o.out);
  std::cout << "trained " << res.steps << " steps over " << res.curve.size() << " epochs\n";
  std::cout << "initial train loss " << res.initial_train << ", final train loss "
            << res.curve.back().train_total << "\n";
  std::cout << "best val loss " << res.best_val << " at epoch " << res.best_epoch << "\n";
  std::cout << "checkpoints: " << o.out << "/best, " << o.out << "/final\n";
  return 0;
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

struct RolloutOpts {
  std::string checkpoint;
  std::string data;
  std::string out;
  int traj = -1;  // default: first validation trajectory
  int start = 0;  // first context frame index
  int steps = 8;
  int ensemble = 8;
  int n_steps = 50;
  std::uint64_t seed = 0;
};

int run_rollout(const RolloutOpts& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const Dataset data = load_dataset(o.data);
  const FilterBank bank = make_filter_bank(ck.wavelet);
  const VelocityNet net(ck.config);

  const int traj = o.traj >= 0 ? o.traj : (data.val_ids.empty() ? 0 : data.val_ids.front());
  if (traj < 0 || traj >= static_cast<int>(data.trajectories.size()))
    throw std::invalid_argument("trajectory index out of range");
  const Trajectory& tr = data.trajectories[traj];
  const Field& f0 = tr.frames.front();
  if (f0.channels != ck.config.channels)
    throw std::invalid_argument("checkpoint/data channel mismatch");
  const int div = 1 << ck.config.n_scales;
  if (f0.height % div != 0 || f0.width % div != 0)
    throw std::invalid_argument("checkpoint/data shape mismatch: grid not divisible by 2^J");
  if (static_cast<int>(tr.params.values.size()) != ck.config.kappa_dim)
    throw std::invalid_argument("checkpoint/data parameter-vector mismatch");

  const int L = ck.config.context_len;
  const int needed = o.start + L + 1 + o.steps;
  if (needed > static_cast<int>(tr.frames.size()))
    throw std::invalid_argument("trajectory too short: need " + std::to_string(needed) +
                                " frames, have " + std::to_string(tr.frames.size()));

  std::vector<Field> initial;
  for (int i = o.start; i <= o.start + L; ++i)
    initial.push_back(standardize(tr.frames[i], data.standardizer));

  SamplerConfig cfg;
  cfg.n_steps = o.n_steps;
  cfg.ensemble = o.ensemble;
  cfg.seed = o.seed;

  const NetVelocityField field(net, ck.params);
  EnsembleForecast fc = rollout(field, initial, tr.params, o.steps, cfg, bank,
                                ck.config.n_scales, data.standardizer);
  for (int t = 0; t < o.steps; ++t) fc.truth.push_back(tr.frames[o.start + L + 1 + t]);

  std::filesystem::create_directories(o.out);
  save_forecast(fc, o.out);
  int failures = 0;
  for (std::int64_t s : fc.failure_steps)
    if (s >= 0) ++failures;
  std::cout << "rollout: M=" << cfg.ensemble << " members x T=" << o.steps << " steps (N="
            << cfg.n_steps << " solver steps), trajectory " << traj << "\n";
  std::cout << "failures: " << failures << "\n";
  std::cout << "written to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string forecast;
  std::string out;
  std::string windows;
  bool coherence_per_member = false;
};

int run_eval(const EvalOpts& o) {
  const EnsembleForecast fc = load_forecast(o.forecast);
  EvaluateOptions opts;
  opts.coherence_per_member = o.coherence_per_member;
  if (!o.windows.empty()) opts.windows = parse_windows(o.windows, fc.steps_t);
  else if (fc.steps_t > 0) opts.windows = {{1, fc.steps_t}};

  const MetricsReport rep = evaluate(fc, opts);
  std::filesystem::create_directories(o.out);
  rep.write_csv(o.out + "/metrics.csv");
  rep.write_json(o.out + "/metrics.json");

  for (const Window& w : rep.windows) {
    for (int c = 0; c < rep.channels; ++c) {
      std::cout << "window " << w.tag() << " ch" << c
                << ": vrmse=" << rep.window_mean("vrmse", w, c)
                << " crps=" << rep.window_mean("crps", w, c) << " coherence_rmse=["
                << rep.window_mean("coherence_rmse", w, c, 0) << ", "
                << rep.window_mean("coherence_rmse", w, c, 1) << ", "
                << rep.window_mean("coherence_rmse", w, c, 2) << "]\n";
    }
  }
  std::cout << "written to " << o.out << "/metrics.csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// wavelet-inspect
// ---------------------------------------------------------------------------

struct InspectOpts {
  std::string input;
  std::string wavelet = "haar";
  int scales = 2;
};

int run_wavelet_inspect(const InspectOpts& o) {
  const TensorFile t = read_tensor(o.input);
  Field f;
  if (t.shape.size() == 3) {
    f = Field(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]),
              static_cast<int>(t.shape[2]));
    f.data = t.as_f64();
  } else if (t.shape.size() == 4) {
    // trajectory file: inspect the first frame
    f = Field(static_cast<int>(t.shape[1]), static_cast<int>(t.shape[2]),
              static_cast<int>(t.shape[3]));
    const std::vector<double> all = t.as_f64();
    std::copy(all.begin(), all.begin() + f.size(), f.data.begin());
  } else {
    throw std::invalid_argument("wavelet-inspect: expected a rank-3 field or rank-4 trajectory");
  }

  const FilterBank bank = make_filter_bank(o.wavelet);
  const WaveletPyramid pyr = dwt_multiscale(f, bank, o.scales);
  const Field back = idwt_multiscale(pyr, bank);
  double recon_err = 0.0;
  for (std::size_t i = 0; i < f.data.size(); ++i)
    recon_err = std::max(recon_err, std::abs(back.data[i] - f.data[i]));

  double total = 0.0;
  std::vector<std::vector<double>> energy(o.scales, std::vector<double>(4, 0.0));
  for (int j = 1; j <= o.scales; ++j) {
    const std::size_t plane =
        static_cast<std::size_t>(pyr.scale_height(j)) * pyr.scale_width(j);
    for (int c = 0; c < pyr.channels; ++c) {
      const double* s = pyr.scales[j - 1].data() + static_cast<std::size_t>(c) * 4 * plane;
      for (int b = 0; b < 4; ++b) {
        if (j < o.scales && b == 0) continue;  // redundant LL slots carry no extra energy
        double e = 0.0;
        for (std::size_t i = 0; i < plane; ++i) e += s[b * plane + i] * s[b * plane + i];
        energy[j - 1][b] += e;
        total += e;
      }
    }
  }

  const char* bands[4] = {"LL", "LH", "HL", "HH"};
  std::cout << "field " << f.channels << "x" << f.height << "x" << f.width << ", wavelet "
            << bank.name() << ", J=" << o.scales << "\n";
  std::cout.precision(6);
  double fraction_sum = 0.0;
  for (int j = 1; j <= o.scales; ++j) {
    std::cout << "scale " << j << ":";
    for (int b = 0; b < 4; ++b) {
      if (j < o.scales && b == 0) continue;
      const double frac = energy[j - 1][b] / total;
      fraction_sum += frac;
      std::cout << " " << bands[b] << "=" << frac;
    }
    std::cout << "\n";
  }
  std::cout << "energy fraction sum: " << fraction_sum << "\n";
  std::cout.precision(3);
  std::cout << "reconstruction max error: " << std::scientific << recon_err << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// grad-check
// ---------------------------------------------------------------------------

struct GradCheckOpts {
  int scales = 1;
  int levels = 2;
  int init_dim = 8;
  int blocks = 1;
  int embed_dim = 16;
  int n_params = 250;
  std::uint64_t seed = 0;
  bool corrupt = false;  // negative-control fixture
};

int run_grad_check(const GradCheckOpts& o) {
  NetConfig cfg;
  cfg.n_scales = o.scales;
  cfg.n_levels = o.levels;
  cfg.init_dim = o.init_dim;
  cfg.blocks_per_level = o.blocks;
  cfg.embed_dim = o.embed_dim;
  cfg.channels = 1;
  cfg.context_len = 2;
  cfg.kappa_dim = 1;
  cfg.validate();

  const VelocityNet net(cfg);
  ParamStore params = net.init_params_dense(o.seed);

  PhiloxRng rng(o.seed + 1);
  NetInputs in;
  const int base = 16;
  for (int j = 1; j <= cfg.n_scales; ++j) {
    Grid z(1, cfg.stem_channels(), base >> j, base >> j);
    for (double& v : z.v) v = rng.next_normal();
    in.z.push_back(std::move(z));
  }
  in.tau = {rng.next_uniform()};
  in.kappa = Vecs(1, 1);
  in.kappa.v[0] = rng.next_normal();
  for (int l = 0; l < cfg.context_len; ++l) {
    Grid f(1, 1, base, base);
    for (double& v : f.v) v = rng.next_normal();
    in.context.push_back(std::move(f));
  }

  Tape tape = net.make_tape();
  const Vecs cond = net.embed_condition(in, params, tape);
  const std::vector<Grid> out = net.forward(in.z, cond, params, tape);

  std::vector<Grid> targets, grad_out;
  for (const Grid& g : out) {
    Grid t(g.batch, g.channels, g.height, g.width);
    for (double& v : t.v) v = rng.next_normal();
    targets.push_back(std::move(t));
  }
  auto loss_of = [&](const std::vector<Grid>& op) {
    double acc = 0.0;
    for (std::size_t j = 0; j < op.size(); ++j) {
      const double inv = 1.0 / static_cast<double>(op[j].v.size());
      for (std::size_t i = 0; i < op[j].v.size(); ++i) {
        const double d = op[j].v[i] - targets[j].v[i];
        acc += d * d * inv;
      }
    }
    return acc;
  };
  for (std::size_t j = 0; j < out.size(); ++j) {
    Grid g(1, out[j].channels, out[j].height, out[j].width);
    const double inv = 1.0 / static_cast<double>(out[j].v.size());
    for (std::size_t i = 0; i < g.v.size(); ++i)
      g.v[i] = 2.0 * (out[j].v[i] - targets[j].v[i]) * inv;
    grad_out.push_back(std::move(g));
  }
  ParamStore grads = net.make_params();
  const auto back = net.backward(grad_out, params, tape, grads);
  net.embed_backward(back.grad_cond, params, tape, grads);

  if (o.corrupt && !grads.entries.empty()) grads.entries[0].value[0] += 1e-2;

  PhiloxRng probe_rng(o.seed + 2);
  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  for (int p = 0; p < o.n_params; ++p) {
    const std::size_t e = std::min<std::size_t>(
        static_cast<std::size_t>(probe_rng.next_uniform() * params.entries.size()),
        params.entries.size() - 1);
    auto& entry = params.entries[e];
    const std::size_t k = std::min<std::size_t>(
        static_cast<std::size_t>(probe_rng.next_uniform() * entry.value.size()),
        entry.value.size() - 1);
    const double orig = entry.value[k];
    entry.value[k] = orig + h;
    Tape t1 = net.make_tape();
    const Vecs c1 = net.embed_condition(in, params, t1);
    const double up = loss_of(net.forward(in.z, c1, params, t1));
    entry.value[k] = orig - h;
    Tape t2 = net.make_tape();
    const Vecs c2 = net.embed_condition(in, params, t2);
    const double down = loss_of(net.forward(in.z, c2, params, t2));
    entry.value[k] = orig;
    const double fd = (up - down) / (2.0 * h);
    const double an = grads.entries[e].value[k];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-5});
    if (rel > worst) {
      worst = rel;
      worst_name = entry.name + "[" + std::to_string(k) + "]";
    }
  }
  std::cout << "grad-check: " << o.n_params << " probes, J=" << o.scales << ", worst relative "
            << std::scientific << worst << " at " << worst_name << "\n";
  if (worst >= 1e-4) {
    std::cout << "FAIL: gradient check exceeded 1e-4\n";
    return 1;
  }
  std::cout << "PASS\n";
  return 0;
}

// ---------------------------------------------------------------------------
// profile
// ---------------------------------------------------------------------------

struct ProfileOpts {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string baseline;  // previous profile report for speedup
  int steps = 8;
  int ensemble = 8;
  int n_steps = 50;
  std::uint64_t seed = 0;
};

int run_profile(const ProfileOpts& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const Dataset data = load_dataset(o.data);
  const FilterBank bank = make_filter_bank(ck.wavelet);
  const VelocityNet net(ck.config);

  const int traj = data.val_ids.empty() ? 0 : data.val_ids.front();
  const Trajectory& tr = data.trajectories[traj];
  const int L = ck.config.context_len;
  if (static_cast<int>(tr.frames.size()) < L + 1 + o.steps)
    throw std::invalid_argument("trajectory too short for the requested rollout");
  std::vector<Field> initial;
  for (int i = 0; i <= L; ++i) initial.push_back(standardize(tr.frames[i], data.standardizer));

  SamplerConfig cfg;
  cfg.n_steps = o.n_steps;
  cfg.ensemble = o.ensemble;
  cfg.seed = o.seed;
  const NetVelocityField field(net, ck.params);

  // timing covers the rollout only; file I/O is excluded
  const auto t0 = std::chrono::steady_clock::now();
  const EnsembleForecast fc = rollout(field, initial, tr.params, o.steps, cfg, bank,
                                      ck.config.n_scales, data.standardizer);
  const auto t1 = std::chrono::steady_clock::now();
  const double wall = std::chrono::duration<double>(t1 - t0).count();

  const double total_steps = static_cast<double>(o.ensemble) * o.steps;
  const double gamma_steps = total_steps / wall;
  const double gamma_frames = gamma_steps * fc.height * fc.width;

  double speedup = 0.0;
  if (!o.baseline.empty()) {
    std::ifstream base(o.baseline);
    if (!base) throw std::invalid_argument("missing baseline report: " + o.baseline);
    std::string line;
    double base_wall = -1.0;
    while (std::getline(base, line)) {
      std::istringstream is(line);
      std::string key;
      is >> key;
      if (key == "wall_clock_s") is >> base_wall;
    }
    if (base_wall <= 0.0)
      throw std::invalid_argument("baseline report lacks wall_clock_s: " + o.baseline);
    speedup = base_wall / wall;
  }

  std::filesystem::create_directories(o.out);
  std::ofstream rep(o.out + "/profile.txt");
  rep.precision(17);
  rep << "wall_clock_s " << wall << "\n";
  rep << "sec_per_step " << wall / total_steps << "\n";
  rep << "steps_per_s " << gamma_steps << "\n";
  rep << "frames_per_s " << gamma_frames << "\n";
  rep << "ensemble " << o.ensemble << "\n";
  rep << "rollout_steps " << o.steps << "\n";
  rep << "nfe_per_step " << o.n_steps << "\n";
  rep << "grid " << fc.height << "x" << fc.width << "\n";
  if (speedup > 0.0) rep << "speedup " << speedup << "\n";

  std::cout << "wall clock: " << wall << " s\n";
  std::cout << "throughput: " << gamma_steps << " steps/s, " << gamma_frames << " frames/s\n";
  if (speedup > 0.0) std::cout << "speedup vs baseline: " << speedup << "x\n";
  std::cout << "report: " << o.out << "/profile.txt\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wavelet flow matching pipeline"};
  app.require_subcommand(1);
  app.set_config("--config");

  GenDataOpts gen;
  CLI::App* cmd_gen = app.add_subcommand("gen-data", "generate a toy-PDE dataset");
  cmd_gen->add_option("--system", gen.system, "heat | gray-scott")->capture_default_str();
  cmd_gen->add_option("--grid", gen.grid, "square grid size (power of two)")->capture_default_str();
  cmd_gen->add_option("--traj", gen.trajectories, "trajectory count")->capture_default_str();
  cmd_gen->add_option("--steps", gen.steps, "frames per trajectory")->capture_default_str();
  cmd_gen->add_option("--seed", gen.seed, "RNG seed")->default_val(default_seed());
  cmd_gen->add_option("--nu", gen.nu, "heat diffusivity")->capture_default_str();
  cmd_gen->add_option("--dt", gen.dt, "time step (0 = per-system default)")->capture_default_str();
  cmd_gen->add_option("--feed", gen.feed, "gray-scott feed rate")->capture_default_str();
  cmd_gen->add_option("--kill", gen.kill, "gray-scott kill rate")->capture_default_str();
  cmd_gen->add_option("--du", gen.du, "gray-scott u diffusivity")->capture_default_str();
  cmd_gen->add_option("--dv", gen.dv, "gray-scott v diffusivity")->capture_default_str();
  cmd_gen->add_option("--train-frac", gen.train_frac, "train split fraction")->capture_default_str();
  cmd_gen->add_option("--out", gen.out, "output directory")->required();

  TrainOpts train;
  CLI::App* cmd_train = app.add_subcommand("train", "train a velocity network");
  cmd_train->add_option("--data", train.data, "dataset directory")->required();
  cmd_train->add_option("--out", train.out, "run directory")->required();
  cmd_train->add_option("--wavelet", train.wavelet, "haar | db2 | db4 | db6")->capture_default_str();
  cmd_train->add_option("--scales", train.scales, "wavelet scales J")->capture_default_str();
  cmd_train->add_option("--levels", train.levels, "U-Net levels (0 = scales)")->capture_default_str();
  cmd_train->add_option("--init-dim", train.init_dim, "base channel width")->capture_default_str();
  cmd_train->add_option("--blocks", train.blocks, "residual blocks per level")->capture_default_str();
  cmd_train->add_option("--embed-dim", train.embed_dim, "conditioning dimension")->capture_default_str();
  cmd_train->add_option("--context", train.context, "context frames L")->capture_default_str();
  cmd_train->add_option("--epochs", train.epochs)->capture_default_str();
  cmd_train->add_option("--warmup", train.warmup, "warmup epochs")->capture_default_str();
  cmd_train->add_option("--batch", train.batch)->capture_default_str();
  cmd_train->add_option("--lr", train.lr, "peak learning rate")->capture_default_str();
  cmd_train->add_option("--weight-decay", train.weight_decay)->capture_default_str();
  cmd_train->add_option("--clip", train.clip, "gradient clip norm")->capture_default_str();
  cmd_train->add_option("--eta-min", train.eta_min, "cosine floor")->capture_default_str();
  cmd_train->add_option("--seed", train.seed)->default_val(default_seed());
  cmd_train->add_option("--max-steps", train.max_steps, "optimizer step cap (0 = none)")
      ->capture_default_str();
  cmd_train->add_option("--threads", train.threads, "worker threads (0 = auto)")->capture_default_str();
  cmd_train->add_flag("--per-subband-loss", train.per_subband_loss,
                      "average four per-band ratios instead of one joint ratio");
  cmd_train->add_option("--weights", train.weights, "per-scale loss weights (default uniform)");

  RolloutOpts roll;
  CLI::App* cmd_roll = app.add_subcommand("rollout", "autoregressive ensemble forecast");
  cmd_roll->add_option("--checkpoint", roll.checkpoint, "checkpoint directory")->required();
  cmd_roll->add_option("--data", roll.data, "dataset directory")->required();
  cmd_roll->add_option("--out", roll.out, "output directory")->required();
  cmd_roll->add_option("--traj", roll.traj, "trajectory index (-1 = first val)")->capture_default_str();
  cmd_roll->add_option("--start", roll.start, "first context frame")->capture_default_str();
  cmd_roll->add_option("--steps", roll.steps, "rollout steps T")->capture_default_str();
  cmd_roll->add_option("--ensemble", roll.ensemble, "ensemble members M")->capture_default_str();
  cmd_roll->add_option("--n-steps", roll.n_steps, "Euler steps N")->capture_default_str();
  cmd_roll->add_option("--seed", roll.seed)->default_val(default_seed());

  EvalOpts eval;
  CLI::App* cmd_eval = app.add_subcommand("eval", "score a forecast");
  cmd_eval->add_option("--forecast", eval.forecast, "forecast directory")->required();
  cmd_eval->add_option("--out", eval.out, "output directory")->required();
  cmd_eval->add_option("--windows", eval.windows, "lead-time windows, e.g. 1:8,9:16");
  cmd_eval->add_flag("--coherence-per-member", eval.coherence_per_member,
                     "average per-member coherence instead of using the ensemble mean");

  InspectOpts inspect;
  CLI::App* cmd_inspect = app.add_subcommand("wavelet-inspect", "per-sub-band energy report");
  cmd_inspect->add_option("--input", inspect.input, "tensor file (field or trajectory)")->required();
  cmd_inspect->add_option("--wavelet", inspect.wavelet)->capture_default_str();
  cmd_inspect->add_option("--scales", inspect.scales)->capture_default_str();

  GradCheckOpts grad;
  CLI::App* cmd_grad = app.add_subcommand("grad-check", "finite-difference gradient check");
  cmd_grad->add_option("--scales", grad.scales)->capture_default_str();
  cmd_grad->add_option("--levels", grad.levels)->capture_default_str();
  cmd_grad->add_option("--init-dim", grad.init_dim)->capture_default_str();
  cmd_grad->add_option("--blocks", grad.blocks)->capture_default_str();
  cmd_grad->add_option("--embed-dim", grad.embed_dim)->capture_default_str();
  cmd_grad->add_option("--n-params", grad.n_params, "sampled parameters")->capture_default_str();
  cmd_grad->add_option("--seed", grad.seed)->default_val(default_seed());
  cmd_grad->add_flag("--corrupt", grad.corrupt, "corrupt one gradient (negative control)");

  ProfileOpts prof;
  CLI::App* cmd_prof = app.add_subcommand("profile", "rollout throughput report");
  cmd_prof->add_option("--checkpoint", prof.checkpoint)->required();
  cmd_prof->add_option("--data", prof.data)->required();
  cmd_prof->add_option("--out", prof.out)->required();
  cmd_prof->add_option("--baseline", prof.baseline, "profile.txt of a baseline run");
  cmd_prof->add_option("--steps", prof.steps)->capture_default_str();
  cmd_prof->add_option("--ensemble", prof.ensemble)->capture_default_str();
  cmd_prof->add_option("--n-steps", prof.n_steps)->capture_default_str();
  cmd_prof->add_option("--seed", prof.seed)->default_val(default_seed());

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors are exit code 2
  }

  try {
    if (cmd_gen->parsed()) {
      echo_config(gen.out, *cmd_gen);
      return run_gen_data(gen);
    }
    if (cmd_train->parsed()) {
      echo_config(train.out, *cmd_train);
      return run_train(train);
    }
    if (cmd_roll->parsed()) {
      echo_config(roll.out, *cmd_roll);
      return run_rollout(roll);
    }
    if (cmd_eval->parsed()) {
      echo_config(eval.out, *cmd_eval);
      return run_eval(eval);
    }
    if (cmd_inspect->parsed()) return run_wavelet_inspect(inspect);
    if (cmd_grad->parsed()) return run_grad_check(grad);
    if (cmd_prof->parsed()) {
      echo_config(prof.out, *cmd_prof);
      return run_profile(prof);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
