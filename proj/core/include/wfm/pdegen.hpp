// Deterministic toy-PDE trajectory generation: a spectrally-exact
// periodic heat equation and an explicit Gray-Scott reaction-diffusion
// integrator, plus dataset assembly with train-split standardization.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wfm/field.hpp"

namespace wfm {

// Periodic heat equation u_t = nu * Laplace(u) on the unit torus,
// integrated exactly per Fourier mode. Grid must be dyadic.
struct HeatSpec {
  int height = 32;
  int width = 32;
  double nu = 1e-3;
  double dt = 0.01;
  int n_steps = 64;  // frame count; frame t is at time t * dt
  std::uint64_t seed = 0;

  void validate() const;
};

// Gray-Scott on the unit torus (dx = 1/W, dy = 1/H), explicit 5-point
// finite differences. The explicit stability bound
// max(du, dv) * dt * (1/dx^2 + 1/dy^2) <= 1/2 is enforced.
struct ReactionDiffusionSpec {
  int height = 64;
  int width = 64;
  double du = 2e-5;
  double dv = 1e-5;
  double feed = 0.030;  // spot-forming regime fixture
  double kill = 0.060;
  double dt = 1.0;
  int n_steps = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// Seeded band-limited Gaussian initial condition (modes |k| <= min(H,W)/8),
// normalized to unit variance.
Field band_limited_noise(int height, int width, std::uint64_t seed);

Trajectory heat_trajectory(const HeatSpec& spec);
// Same integrator from a caller-supplied initial state (oracle hook).
Trajectory heat_trajectory_from(const Field& initial, const HeatSpec& spec);

Trajectory grayscott_trajectory(const ReactionDiffusionSpec& spec);
Trajectory grayscott_trajectory_from(const Field& initial, const ReactionDiffusionSpec& spec);

struct Dataset {
  std::vector<Trajectory> trajectories;
  std::vector<int> train_ids;
  std::vector<int> val_ids;
  Standardizer standardizer;  // fitted on the train split only
  std::string system;
};

// Generates n_trajectories with IC seeds base.seed + index, rounds frames
// through f32 (the bulk storage dtype), splits train/val, and fits the
// standardizer on the train split.
Dataset make_heat_dataset(const HeatSpec& base, int n_trajectories, double train_fraction);
Dataset make_grayscott_dataset(const ReactionDiffusionSpec& base, int n_trajectories,
                               double train_fraction);

// Directory layout: manifest.txt + traj_XXXX.wfmt tensors of shape
// (T, C, H, W), stored f32.
void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace wfm
