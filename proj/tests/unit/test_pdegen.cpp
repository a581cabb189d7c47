#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <stdexcept>

#include "wfm/pdegen.hpp"
#include "wfm/rng.hpp"

using namespace wfm;

namespace {

double spatial_mean(const Field& f, int c) {
  const std::size_t plane = static_cast<std::size_t>(f.height) * f.width;
  double s = 0.0;
  for (std::size_t i = 0; i < plane; ++i) s += f.data[c * plane + i];
  return s / static_cast<double>(plane);
}

Field cosine_mode(int h, int w, int k, int l) {
  Field f(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      f.at(0, y, x) = std::cos(2.0 * std::numbers::pi *
                               (static_cast<double>(k) * x / w + static_cast<double>(l) * y / h));
  return f;
}

}  // namespace

TEST_CASE("heat: single mode decays at the analytic rate") {
  HeatSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.nu = 2e-3;
  spec.dt = 0.05;
  spec.n_steps = 2;
  const int k = 3, l = 1;
  const Trajectory t = heat_trajectory_from(cosine_mode(16, 16, k, l), spec);
  const double decay = std::exp(-spec.nu * 4.0 * std::numbers::pi * std::numbers::pi *
                                (k * k + l * l) * spec.dt);
  for (std::size_t i = 0; i < t.frames[0].data.size(); ++i)
    CHECK(std::abs(t.frames[1].data[i] - decay * t.frames[0].data[i]) < 1e-12);
}

TEST_CASE("heat: every mode on an 8x8 grid decays exactly") {
  HeatSpec spec;
  spec.height = 8;
  spec.width = 8;
  spec.nu = 1e-3;
  spec.dt = 0.1;
  spec.n_steps = 2;
  for (int k = 0; k < 8; ++k) {
    for (int l = 0; l < 8; ++l) {
      const int sk = k <= 4 ? k : k - 8;
      const int sl = l <= 4 ? l : l - 8;
      const Trajectory t = heat_trajectory_from(cosine_mode(8, 8, k, l), spec);
      const double decay = std::exp(-spec.nu * 4.0 * std::numbers::pi * std::numbers::pi *
                                    (sk * sk + sl * sl) * spec.dt);
      for (std::size_t i = 0; i < t.frames[0].data.size(); ++i)
        CHECK(std::abs(t.frames[1].data[i] - decay * t.frames[0].data[i]) < 1e-12);
    }
  }
}

TEST_CASE("heat: zero diffusivity freezes the field") {
  HeatSpec spec;
  spec.nu = 0.0;
  spec.height = 16;
  spec.width = 16;
  spec.n_steps = 5;
  spec.seed = 3;
  const Trajectory t = heat_trajectory(spec);
  for (int i = 1; i < 5; ++i)
    for (std::size_t j = 0; j < t.frames[0].data.size(); ++j)
      CHECK(std::abs(t.frames[i].data[j] - t.frames[0].data[j]) < 1e-12);
}

TEST_CASE("heat: spatial mean is conserved") {
  HeatSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.nu = 5e-3;
  spec.n_steps = 10;
  spec.seed = 9;
  const Trajectory t = heat_trajectory(spec);
  const double m0 = spatial_mean(t.frames[0], 0);
  for (const Field& f : t.frames) CHECK(std::abs(spatial_mean(f, 0) - m0) < 1e-12);
}

TEST_CASE("heat: kappa carries nu") {
  HeatSpec spec;
  spec.nu = 0.007;
  spec.n_steps = 2;
  const Trajectory t = heat_trajectory(spec);
  REQUIRE(t.params.values.size() == 1);
  CHECK(t.params.names[0] == "nu");
  CHECK(t.params.values[0] == 0.007);
}

TEST_CASE("heat: non-dyadic grid is rejected") {
  HeatSpec spec;
  spec.height = 24;
  CHECK_THROWS_AS(static_cast<void>(heat_trajectory(spec)), std::invalid_argument);
}

TEST_CASE("gray-scott: trivial fixed point is stationary") {
  ReactionDiffusionSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.n_steps = 10;
  Field init(2, 16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) init.at(0, y, x) = 1.0;  // u=1, v=0
  const Trajectory t = grayscott_trajectory_from(init, spec);
  for (const Field& f : t.frames)
    for (std::size_t i = 0; i < f.data.size(); ++i)
      CHECK(std::abs(f.data[i] - init.data[i]) < 1e-14);
}

TEST_CASE("gray-scott: pure diffusion conserves the mean") {
  ReactionDiffusionSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.feed = 0.0;
  spec.kill = 0.0;
  spec.n_steps = 20;
  // v = 0 shuts off the reaction term, leaving diffusion of u
  Field init(2, 16, 16);
  PhiloxRng rng(4);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) init.at(0, y, x) = 1.0 + 0.1 * rng.next_normal();
  const Trajectory t = grayscott_trajectory_from(init, spec);
  const double m0 = spatial_mean(t.frames[0], 0);
  for (const Field& f : t.frames) CHECK(std::abs(spatial_mean(f, 0) - m0) < 1e-10);
}

TEST_CASE("gray-scott: deterministic per seed and finite") {
  ReactionDiffusionSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.n_steps = 30;
  spec.seed = 11;
  const Trajectory a = grayscott_trajectory(spec);
  const Trajectory b = grayscott_trajectory(spec);
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].all_finite());
    for (std::size_t j = 0; j < a.frames[i].data.size(); ++j)
      CHECK(a.frames[i].data[j] == b.frames[i].data[j]);
  }
  CHECK(a.params.names[0] == "feed");
  CHECK(a.params.names[1] == "kill");
}

TEST_CASE("gray-scott: stability bound is enforced") {
  ReactionDiffusionSpec spec;
  spec.height = 64;
  spec.width = 64;
  spec.du = 1e-3;  // way past the explicit bound at dt=1
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("dataset assembly: split sizes, refit, and round trip") {
  HeatSpec base;
  base.height = 16;
  base.width = 16;
  base.n_steps = 8;
  base.seed = 42;
  const Dataset d = make_heat_dataset(base, 10, 0.8);
  CHECK(d.train_ids.size() == 8);
  CHECK(d.val_ids.size() == 2);

  // refitting on the train split reproduces the stored statistics bit-exactly
  std::vector<const Trajectory*> train;
  for (int id : d.train_ids) train.push_back(&d.trajectories[id]);
  const Standardizer refit = fit_standardizer(train);
  CHECK(refit.mean[0] == d.standardizer.mean[0]);
  CHECK(refit.std[0] == d.standardizer.std[0]);

  const auto dir = std::filesystem::temp_directory_path() / "wfm_dataset_test";
  std::filesystem::create_directories(dir);
  save_dataset(d, dir.string());
  const Dataset back = load_dataset(dir.string());
  CHECK(back.system == "heat");
  REQUIRE(back.trajectories.size() == 10);
  CHECK(back.standardizer.mean[0] == d.standardizer.mean[0]);
  CHECK(back.standardizer.std[0] == d.standardizer.std[0]);
  CHECK(back.train_ids == d.train_ids);
  CHECK(back.val_ids == d.val_ids);
  CHECK(back.trajectories[3].params.values[0] == d.trajectories[3].params.values[0]);
  // frames were stored f32 and already rounded in memory: bit-exact round trip
  for (std::size_t i = 0; i < d.trajectories[0].frames.size(); ++i)
    for (std::size_t j = 0; j < d.trajectories[0].frames[i].data.size(); ++j)
      CHECK(back.trajectories[0].frames[i].data[j] == d.trajectories[0].frames[i].data[j]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset needs at least two trajectories") {
  HeatSpec base;
  base.height = 16;
  base.width = 16;
  base.n_steps = 4;
  CHECK_THROWS_AS(static_cast<void>(make_heat_dataset(base, 1, 0.5)), std::invalid_argument);
}
