#include "wfm/pdegen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "wfm/rng.hpp"
#include "wfm/spectral.hpp"
#include "wfm/tensor_io.hpp"

namespace wfm {
namespace {

bool is_pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }

void round_through_f32(Field& f) {
  for (double& v : f.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

void HeatSpec::validate() const {
  if (!is_pow2(height) || !is_pow2(width))
    throw std::invalid_argument("HeatSpec: grid must be dyadic");
  if (!(nu >= 0.0)) throw std::invalid_argument("HeatSpec: nu must be >= 0");
  if (!(dt > 0.0)) throw std::invalid_argument("HeatSpec: dt must be positive");
  if (n_steps < 1) throw std::invalid_argument("HeatSpec: n_steps must be >= 1");
}

void ReactionDiffusionSpec::validate() const {
  if (!is_pow2(height) || !is_pow2(width))
    throw std::invalid_argument("ReactionDiffusionSpec: grid must be dyadic");
  if (!(du > 0.0) || !(dv > 0.0))
    throw std::invalid_argument("ReactionDiffusionSpec: diffusivities must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("ReactionDiffusionSpec: dt must be positive");
  if (n_steps < 1) throw std::invalid_argument("ReactionDiffusionSpec: n_steps must be >= 1");
  const double dx2 = 1.0 / (static_cast<double>(width) * width);
  const double dy2 = 1.0 / (static_cast<double>(height) * height);
  const double bound = std::max(du, dv) * dt * (1.0 / dx2 + 1.0 / dy2);
  if (bound > 0.5)
    throw std::invalid_argument("ReactionDiffusionSpec: explicit stability bound violated (" +
                                std::to_string(bound) + " > 0.5)");
}

Field band_limited_noise(int height, int width, std::uint64_t seed) {
  PhiloxRng rng(seed);
  std::vector<Complex> pixel(static_cast<std::size_t>(height) * width);
  for (Complex& c : pixel) c = Complex(rng.next_normal(), 0.0);
  std::vector<Complex> spec = fft2(pixel, height, width, false);

  const int limit = std::min(height, width) / 8;
  for (int ky = 0; ky < height; ++ky) {
    const int sy = ky <= height / 2 ? ky : ky - height;
    for (int kx = 0; kx < width; ++kx) {
      const int sx = kx <= width / 2 ? kx : kx - width;
      if (std::hypot(static_cast<double>(sx), static_cast<double>(sy)) > limit)
        spec[static_cast<std::size_t>(ky) * width + kx] = Complex(0.0, 0.0);
    }
  }
  std::vector<Complex> back = fft2(spec, height, width, true);

  Field f(1, height, width);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    f.data[i] = back[i].real();
    sum += f.data[i];
    sq += f.data[i] * f.data[i];
  }
  const double n = static_cast<double>(f.data.size());
  const double sd = std::sqrt(std::max(sq / n - (sum / n) * (sum / n), 1e-300));
  for (double& v : f.data) v /= sd;
  return f;
}

Trajectory heat_trajectory_from(const Field& initial, const HeatSpec& spec) {
  spec.validate();
  if (initial.channels != 1 || initial.height != spec.height || initial.width != spec.width)
    throw std::invalid_argument("heat_trajectory: initial shape mismatch");
  const int H = spec.height, W = spec.width;

  std::vector<Complex> c0(initial.data.size());
  for (std::size_t i = 0; i < c0.size(); ++i) c0[i] = Complex(initial.data[i], 0.0);
  const std::vector<Complex> spec0 = fft2(c0, H, W, false);

  // per-mode decay rate nu * (2 pi)^2 (k^2 + l^2) on the unit torus
  std::vector<double> rate(spec0.size());
  const double fourpi2 = 4.0 * std::numbers::pi * std::numbers::pi;
  for (int ky = 0; ky < H; ++ky) {
    const int sy = ky <= H / 2 ? ky : ky - H;
    for (int kx = 0; kx < W; ++kx) {
      const int sx = kx <= W / 2 ? kx : kx - W;
      rate[static_cast<std::size_t>(ky) * W + kx] =
          spec.nu * fourpi2 * (static_cast<double>(sx) * sx + static_cast<double>(sy) * sy);
    }
  }

  Trajectory traj;
  traj.dt = spec.dt;
  traj.params.values = {spec.nu};
  traj.params.names = {"nu"};
  traj.frames.reserve(spec.n_steps);
  std::vector<Complex> st(spec0.size());
  for (int t = 0; t < spec.n_steps; ++t) {
    const double time = spec.dt * t;
    for (std::size_t i = 0; i < st.size(); ++i) st[i] = spec0[i] * std::exp(-rate[i] * time);
    const std::vector<Complex> frame = fft2(st, H, W, true);
    Field f(1, H, W);
    for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = frame[i].real();
    if (!f.all_finite()) throw std::runtime_error("heat_trajectory: non-finite state");
    traj.frames.push_back(std::move(f));
  }
  return traj;
}

Trajectory heat_trajectory(const HeatSpec& spec) {
  spec.validate();
  return heat_trajectory_from(band_limited_noise(spec.height, spec.width, spec.seed), spec);
}

Trajectory grayscott_trajectory_from(const Field& initial, const ReactionDiffusionSpec& spec) {
  spec.validate();
  if (initial.channels != 2 || initial.height != spec.height || initial.width != spec.width)
    throw std::invalid_argument("grayscott_trajectory: initial must be (2, H, W)");
  const int H = spec.height, W = spec.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const double inv_dx2 = static_cast<double>(W) * W;  // unit torus
  const double inv_dy2 = static_cast<double>(H) * H;

  Trajectory traj;
  traj.dt = spec.dt;
  traj.params.values = {spec.feed, spec.kill};
  traj.params.names = {"feed", "kill"};
  traj.frames.reserve(spec.n_steps);
  traj.frames.push_back(initial);

  std::vector<double> u(initial.data.begin(), initial.data.begin() + plane);
  std::vector<double> v(initial.data.begin() + plane, initial.data.end());
  std::vector<double> un(plane), vn(plane);

  auto lap = [&](const std::vector<double>& a, int y, int x) {
    const int ym = y == 0 ? H - 1 : y - 1, yp = y == H - 1 ? 0 : y + 1;
    const int xm = x == 0 ? W - 1 : x - 1, xp = x == W - 1 ? 0 : x + 1;
    const std::size_t i = static_cast<std::size_t>(y) * W + x;
    const double c = a[i];
    return (a[static_cast<std::size_t>(y) * W + xm] + a[static_cast<std::size_t>(y) * W + xp] -
            2.0 * c) * inv_dx2 +
           (a[static_cast<std::size_t>(ym) * W + x] + a[static_cast<std::size_t>(yp) * W + x] -
            2.0 * c) * inv_dy2;
  };

  for (int t = 1; t < spec.n_steps; ++t) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * W + x;
        const double uv2 = u[i] * v[i] * v[i];
        un[i] = u[i] + spec.dt * (spec.du * lap(u, y, x) - uv2 + spec.feed * (1.0 - u[i]));
        vn[i] = v[i] + spec.dt * (spec.dv * lap(v, y, x) + uv2 - (spec.feed + spec.kill) * v[i]);
      }
    }
    u.swap(un);
    v.swap(vn);
    Field f(2, H, W);
    std::copy(u.begin(), u.end(), f.data.begin());
    std::copy(v.begin(), v.end(), f.data.begin() + plane);
    if (!f.all_finite())
      throw std::runtime_error("grayscott_trajectory: non-finite state at step " +
                               std::to_string(t));
    traj.frames.push_back(std::move(f));
  }
  return traj;
}

Trajectory grayscott_trajectory(const ReactionDiffusionSpec& spec) {
  spec.validate();
  const int H = spec.height, W = spec.width;
  Field init(2, H, W);
  // u = 1, v = 0 background with a perturbed central square
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) init.at(0, y, x) = 1.0;
  PhiloxRng rng(spec.seed);
  const int y0 = H / 2 - H / 8, y1 = H / 2 + H / 8;
  const int x0 = W / 2 - W / 8, x1 = W / 2 + W / 8;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      init.at(0, y, x) = 0.50 + 0.02 * rng.next_normal();
      init.at(1, y, x) = 0.25 + 0.02 * rng.next_normal();
    }
  }
  return grayscott_trajectory_from(init, spec);
}

namespace {

Dataset assemble(std::vector<Trajectory> trajs, double train_fraction, const std::string& system) {
  if (trajs.size() < 2) throw std::invalid_argument("make_dataset: need >= 2 trajectories");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("make_dataset: train fraction must be in (0,1)");
  Dataset d;
  d.system = system;
  d.trajectories = std::move(trajs);
  for (Trajectory& t : d.trajectories)
    for (Field& f : t.frames) round_through_f32(f);  // bulk storage is f32

  const int n = static_cast<int>(d.trajectories.size());
  int n_train = static_cast<int>(std::lround(train_fraction * n));
  n_train = std::max(1, std::min(n_train, n - 1));
  for (int i = 0; i < n; ++i)
    (i < n_train ? d.train_ids : d.val_ids).push_back(i);

  std::vector<const Trajectory*> train;
  for (int id : d.train_ids) train.push_back(&d.trajectories[id]);
  d.standardizer = fit_standardizer(train);
  return d;
}

}  // namespace

Dataset make_heat_dataset(const HeatSpec& base, int n_trajectories, double train_fraction) {
  std::vector<Trajectory> trajs;
  trajs.reserve(n_trajectories);
  for (int i = 0; i < n_trajectories; ++i) {
    HeatSpec spec = base;
    spec.seed = base.seed + static_cast<std::uint64_t>(i);
    trajs.push_back(heat_trajectory(spec));
  }
  return assemble(std::move(trajs), train_fraction, "heat");
}

Dataset make_grayscott_dataset(const ReactionDiffusionSpec& base, int n_trajectories,
                               double train_fraction) {
  std::vector<Trajectory> trajs;
  trajs.reserve(n_trajectories);
  for (int i = 0; i < n_trajectories; ++i) {
    ReactionDiffusionSpec spec = base;
    spec.seed = base.seed + static_cast<std::uint64_t>(i);
    trajs.push_back(grayscott_trajectory(spec));
  }
  return assemble(std::move(trajs), train_fraction, "gray-scott");
}

void save_dataset(const Dataset& dataset, const std::string& dir) {
  if (dataset.trajectories.empty()) throw std::invalid_argument("save_dataset: empty");
  std::ofstream man(dir + "/manifest.txt");
  if (!man) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
  man.precision(17);

  const Trajectory& t0 = dataset.trajectories.front();
  man << "system " << dataset.system << "\n";
  man << "trajectories " << dataset.trajectories.size() << "\n";
  man << "channels " << t0.frames.front().channels << "\n";
  man << "height " << t0.frames.front().height << "\n";
  man << "width " << t0.frames.front().width << "\n";
  man << "dt " << t0.dt << "\n";
  man << "standardizer_mean";
  for (double m : dataset.standardizer.mean) man << " " << m;
  man << "\nstandardizer_std";
  for (double s : dataset.standardizer.std) man << " " << s;
  man << "\ntrain";
  for (int id : dataset.train_ids) man << " " << id;
  man << "\nval";
  for (int id : dataset.val_ids) man << " " << id;
  man << "\n";

  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    const Trajectory& t = dataset.trajectories[i];
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%04zu.wfmt", i);
    man << "traj " << i << " file " << name << " params";
    for (std::size_t p = 0; p < t.params.values.size(); ++p)
      man << " " << t.params.names[p] << "=" << t.params.values[p];
    man << "\n";

    const Field& f0 = t.frames.front();
    std::vector<float> buf;
    buf.reserve(t.frames.size() * f0.size());
    for (const Field& f : t.frames)
      for (double v : f.data) buf.push_back(static_cast<float>(v));
    const std::uint64_t shape[4] = {
        t.frames.size(), static_cast<std::uint64_t>(f0.channels),
        static_cast<std::uint64_t>(f0.height), static_cast<std::uint64_t>(f0.width)};
    write_tensor(dir + "/" + name, shape, std::span<const float>(buf));
  }
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream man(dir + "/manifest.txt");
  if (!man) throw std::runtime_error("load_dataset: missing manifest in " + dir);

  Dataset d;
  std::size_t n_traj = 0;
  double dt = 1.0;
  std::vector<std::pair<std::string, ParamVector>> files;
  std::string line;
  while (std::getline(man, line)) {
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "system") is >> d.system;
    else if (key == "trajectories") is >> n_traj;
    else if (key == "dt") is >> dt;
    else if (key == "standardizer_mean") {
      double v;
      while (is >> v) d.standardizer.mean.push_back(v);
    } else if (key == "standardizer_std") {
      double v;
      while (is >> v) d.standardizer.std.push_back(v);
    } else if (key == "train") {
      int id;
      while (is >> id) d.train_ids.push_back(id);
    } else if (key == "val") {
      int id;
      while (is >> id) d.val_ids.push_back(id);
    } else if (key == "traj") {
      int id;
      std::string kw, file;
      is >> id >> kw >> file >> kw;  // "file <name> params"
      ParamVector params;
      std::string tok;
      while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        params.names.push_back(tok.substr(0, eq));
        params.values.push_back(std::stod(tok.substr(eq + 1)));
      }
      files.emplace_back(file, std::move(params));
    }
  }
  if (files.size() != n_traj)
    throw std::runtime_error("load_dataset: manifest lists " + std::to_string(files.size()) +
                             " files, expected " + std::to_string(n_traj));

  for (const auto& [file, params] : files) {
    TensorFile t = read_tensor(dir + "/" + file);
    if (t.shape.size() != 4) throw std::runtime_error("load_dataset: trajectory must be rank 4");
    const int T = static_cast<int>(t.shape[0]);
    const int C = static_cast<int>(t.shape[1]);
    const int H = static_cast<int>(t.shape[2]);
    const int W = static_cast<int>(t.shape[3]);
    const std::vector<double> data = t.as_f64();
    Trajectory traj;
    traj.dt = dt;
    traj.params = params;
    const std::size_t frame = static_cast<std::size_t>(C) * H * W;
    traj.frames.reserve(T);
    for (int i = 0; i < T; ++i) {
      Field f(C, H, W);
      std::copy(data.begin() + i * frame, data.begin() + (i + 1) * frame, f.data.begin());
      traj.frames.push_back(std::move(f));
    }
    traj.validate();
    d.trajectories.push_back(std::move(traj));
  }
  d.standardizer.validate();
  return d;
}

}  // namespace wfm
