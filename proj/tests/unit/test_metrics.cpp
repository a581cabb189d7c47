#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "wfm/metrics.hpp"
#include "wfm/rng.hpp"
#include "wfm/spectral.hpp"

using namespace wfm;

namespace {

std::vector<double> random_plane(int h, int w, std::uint64_t seed) {
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  PhiloxRng rng(seed);
  for (double& x : v) x = rng.next_normal();
  return v;
}

// independent direct-summation DFT oracle, O((HW)^2)
std::vector<Complex> oracle_dft(const std::vector<double>& f, int h, int w) {
  std::vector<Complex> out(f.size());
  for (int ky = 0; ky < h; ++ky) {
    for (int kx = 0; kx < w; ++kx) {
      Complex acc(0.0, 0.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double ang =
              -2.0 * std::numbers::pi * (static_cast<double>(ky) * y / h +
                                         static_cast<double>(kx) * x / w);
          acc += f[static_cast<std::size_t>(y) * w + x] * Complex(std::cos(ang), std::sin(ang));
        }
      out[static_cast<std::size_t>(ky) * w + kx] = acc;
    }
  }
  return out;
}

// ring binning re-derived from scratch for the oracle
int oracle_ring(int ky, int kx, int h, int w) {
  const int sy = ky <= h / 2 ? ky : ky - h;
  const int sx = kx <= w / 2 ? kx : kx - w;
  const double r = std::min(h, w) * std::sqrt(static_cast<double>(sx) * sx / (static_cast<double>(w) * w) +
                                              static_cast<double>(sy) * sy / (static_cast<double>(h) * h));
  return static_cast<int>(std::llround(r));
}

std::vector<double> oracle_coherence(const std::vector<double>& u, const std::vector<double>& v,
                                     int h, int w) {
  const auto su = oracle_dft(u, h, w);
  const auto sv = oracle_dft(v, h, w);
  const int rings = std::min(h, w) / 2;
  std::vector<double> pu(rings, 0.0), pv(rings, 0.0), cx(rings, 0.0);
  std::vector<int> count(rings, 0);
  for (int ky = 0; ky < h; ++ky)
    for (int kx = 0; kx < w; ++kx) {
      const int r = oracle_ring(ky, kx, h, w);
      if (r < 1 || r > rings) continue;
      const std::size_t i = static_cast<std::size_t>(ky) * w + kx;
      pu[r - 1] += std::norm(su[i]);
      pv[r - 1] += std::norm(sv[i]);
      cx[r - 1] += std::abs(su[i] * std::conj(sv[i]));
      count[r - 1] += 1;
    }
  std::vector<double> gamma(rings, 0.0);
  for (int r = 0; r < rings; ++r) {
    const double a = cx[r] / count[r], b = pu[r] / count[r], c = pv[r] / count[r];
    gamma[r] = std::min(1.0, std::max(0.0, (a + 1e-6) / (std::sqrt(b * c) + 1e-6)));
  }
  return gamma;
}

double oracle_vrmse(const std::vector<double>& u, const std::vector<double>& v) {
  const double n = static_cast<double>(u.size());
  double mu = 0.0;
  for (double x : u) mu += x;
  mu /= n;
  double se = 0.0, var = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    se += (u[i] - v[i]) * (u[i] - v[i]);
    var += (u[i] - mu) * (u[i] - mu);
  }
  return std::sqrt(se / n / (var / n + 1e-6));
}

double oracle_crps(const std::vector<double>& u, const std::vector<std::vector<double>>& members) {
  const int m = static_cast<int>(members.size());
  const double n = static_cast<double>(u.size());
  double first = 0.0;
  for (const auto& vm : members) {
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += std::abs(vm[i] - u[i]);
    first += acc / n;
  }
  first /= m;
  double second = 0.0;
  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) acc += std::abs(members[a][i] - members[b][i]);
      second += acc / n;
    }
  second /= static_cast<double>(m) * (m - 1);
  return first - second;
}

}  // namespace

TEST_CASE("fft matches the direct transform") {
  for (const auto [h, w] : {std::pair{8, 8}, std::pair{16, 8}, std::pair{16, 16}}) {
    const std::vector<double> f = random_plane(h, w, h * 100 + w);
    const auto fast = fft2_real(f, h, w);
    const auto direct = dft2_direct(f, h, w);
    for (std::size_t i = 0; i < fast.size(); ++i)
      CHECK(std::abs(fast[i] - direct[i]) < 1e-10);
  }
}

TEST_CASE("fft round trip and Parseval") {
  const int h = 8, w = 8;
  const std::vector<double> f = random_plane(h, w, 3);
  const auto spec = fft2_real(f, h, w);
  const auto back = fft2(spec, h, w, true);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(back[i].real() - f[i]) < 1e-12);

  double field_e = 0.0, spec_e = 0.0;
  for (double v : f) field_e += v * v;
  for (const Complex& c : spec) spec_e += std::norm(c);
  CHECK(spec_e == doctest::Approx(h * w * field_e).epsilon(1e-12));
}

TEST_CASE("vrmse basics") {
  const std::vector<double> u = random_plane(4, 4, 9);
  CHECK(vrmse(u, u) == 0.0);

  // predicting the spatial mean scores ~1
  std::vector<double> unit(256);
  for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = (i % 2 == 0) ? 1.0 : -1.0;
  const std::vector<double> mean_pred(unit.size(), 0.0);
  CHECK(vrmse(unit, mean_pred) == doctest::Approx(1.0).epsilon(1e-5));

  const std::vector<double> u2 = {0.0, 2.0};
  const std::vector<double> v2 = {1.0, 1.0};
  CHECK(vrmse(u2, v2) == doctest::Approx(std::sqrt(1.0 / (1.0 + 1e-6))).epsilon(1e-12));
}

TEST_CASE("vrmse invariant to joint permutation") {
  const std::vector<double> u = random_plane(4, 4, 10);
  const std::vector<double> v = random_plane(4, 4, 11);
  const std::vector<double> ur(u.rbegin(), u.rend()), vr(v.rbegin(), v.rend());
  CHECK(vrmse(u, v) == doctest::Approx(vrmse(ur, vr)).epsilon(1e-14));
}

TEST_CASE("fair crps hand examples") {
  const int n = 4;
  std::vector<double> u(n, 0.0);
  {
    std::vector<double> members(2 * n);
    for (int i = 0; i < n; ++i) members[i] = -1.0;
    for (int i = 0; i < n; ++i) members[n + i] = 1.0;
    CHECK(crps_fair(u, members, 2) == doctest::Approx(0.0).epsilon(1e-15));
  }
  {
    std::vector<double> members(2 * n, 1.0);
    CHECK(crps_fair(u, members, 2) == doctest::Approx(1.0).epsilon(1e-15));
  }
  {
    // all members equal the truth
    std::vector<double> truth = random_plane(2, 2, 12);
    std::vector<double> members;
    for (int m = 0; m < 3; ++m) members.insert(members.end(), truth.begin(), truth.end());
    CHECK(crps_fair(truth, members, 3) == 0.0);
  }
  CHECK_THROWS_AS(static_cast<void>(crps_fair(u, u, 1)), std::invalid_argument);
}

TEST_CASE("fair crps reduces to MAE for identical members") {
  const std::vector<double> u = random_plane(4, 4, 13);
  const std::vector<double> one = random_plane(4, 4, 14);
  std::vector<double> members;
  for (int m = 0; m < 4; ++m) members.insert(members.end(), one.begin(), one.end());
  double mae = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) mae += std::abs(one[i] - u[i]);
  mae /= static_cast<double>(u.size());
  CHECK(crps_fair(u, members, 4) == doctest::Approx(mae).epsilon(1e-14));
}

TEST_CASE("fair crps translation invariance and homogeneity") {
  const std::vector<double> u = random_plane(4, 4, 15);
  std::vector<std::vector<double>> ms;
  for (int m = 0; m < 3; ++m) ms.push_back(random_plane(4, 4, 20 + m));
  auto flat = [&](const std::vector<std::vector<double>>& mm) {
    std::vector<double> out;
    for (const auto& v : mm) out.insert(out.end(), v.begin(), v.end());
    return out;
  };
  const double base = crps_fair(u, flat(ms), 3);

  std::vector<double> u_shift = u;
  auto ms_shift = ms;
  for (double& x : u_shift) x += 2.5;
  for (auto& v : ms_shift)
    for (double& x : v) x += 2.5;
  CHECK(crps_fair(u_shift, flat(ms_shift), 3) == doctest::Approx(base).epsilon(1e-12));

  std::vector<double> u_scale = u;
  auto ms_scale = ms;
  for (double& x : u_scale) x *= 3.0;
  for (auto& v : ms_scale)
    for (double& x : v) x *= 3.0;
  CHECK(crps_fair(u_scale, flat(ms_scale), 3) == doctest::Approx(3.0 * base).epsilon(1e-12));
}

TEST_CASE("radial psd basics") {
  std::vector<double> constant(64, 2.0);
  const std::vector<double> p = radial_psd(constant, 8, 8);
  for (double v : p) CHECK(v == doctest::Approx(0.0).epsilon(1e-18));

  // pure cosine on ring 2 concentrates all energy there
  const int h = 16, w = 16;
  std::vector<double> cosine(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      cosine[static_cast<std::size_t>(y) * w + x] =
          std::cos(2.0 * std::numbers::pi * 2.0 * x / w);
  const std::vector<double> pc = radial_psd(cosine, h, w);
  CHECK(pc[1] > 0.0);
  for (std::size_t r = 0; r < pc.size(); ++r)
    if (r != 1) CHECK(pc[r] < 1e-20 * pc[1]);
}

TEST_CASE("coherence of a field with itself is one") {
  const std::vector<double> u = random_plane(16, 16, 30);
  const CoherenceTable t = coherence(u, u, 16, 16);
  for (double g : t.gamma) CHECK(g == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t.max_preclamp_excess < 1e-9);
}

TEST_CASE("coherence is scale invariant up to epsilon effects") {
  const std::vector<double> u = random_plane(16, 16, 31);
  std::vector<double> v = u;
  for (double& x : v) x *= 4.2;
  const CoherenceTable t = coherence(u, v, 16, 16);
  for (double g : t.gamma) CHECK(std::abs(g - 1.0) < 1e-5);
}

TEST_CASE("coherence matches the brute-force oracle on 4x4 grids") {
  const std::vector<double> u = random_plane(4, 4, 32);
  const std::vector<double> v = random_plane(4, 4, 33);
  const CoherenceTable t = coherence(u, v, 4, 4);
  const std::vector<double> oracle = oracle_coherence(u, v, 4, 4);
  REQUIRE(t.gamma.size() == oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i)
    CHECK(t.gamma[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
}

TEST_CASE("band rmse basics and the hand-set table") {
  const int rings = 9;
  BandSpec bands;
  bands.lo = {1, 4, 7};
  bands.hi = {3, 6, 9};

  std::vector<double> perfect(rings, 1.0);
  const auto zero = band_rmse_from_table(perfect, bands);
  for (double v : zero) CHECK(v == 0.0);

  std::vector<double> uncorrelated(rings, 0.0);
  const auto ceiling = band_rmse_from_table(uncorrelated, bands);
  for (double v : ceiling) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));

  // hand-set gamma (1, 0.5, 0) in the low band
  std::vector<double> table(rings, 1.0);
  table[0] = 1.0;
  table[1] = 0.5;
  table[2] = 0.0;
  const auto rmse = band_rmse_from_table(table, bands);
  CHECK(rmse[0] == doctest::Approx(std::sqrt((0.0 + 0.25 + 1.0) / 3.0)).epsilon(1e-12));
  CHECK(rmse[0] == doctest::Approx(0.6455).epsilon(1e-3));
}

TEST_CASE("log bands partition the rings") {
  const BandSpec b16 = make_log_bands(16);
  CHECK(b16.lo[0] == 1);
  CHECK(b16.hi[0] == 2);
  CHECK(b16.lo[1] == 3);
  CHECK(b16.hi[1] == 6);
  CHECK(b16.lo[2] == 7);
  CHECK(b16.hi[2] == 16);

  BandSpec bad;
  bad.lo = {1, 5, 4};
  bad.hi = {4, 3, 16};
  CHECK_THROWS_AS(bad.validate(16), std::invalid_argument);
}

TEST_CASE("evaluate: perfect forecast scores zero everywhere") {
  EnsembleForecast f;
  f.members_m = 2;
  f.steps_t = 2;
  f.channels = 1;
  f.height = 16;
  f.width = 16;
  f.failure_steps = {-1, -1};
  const std::size_t frame = f.frame_size();
  f.members.resize(2 * 2 * frame);
  for (int t = 0; t < 2; ++t) {
    Field truth(1, 16, 16);
    PhiloxRng rng(40 + t);
    for (double& v : truth.data) v = rng.next_normal();
    f.truth.push_back(truth);
    for (int m = 0; m < 2; ++m)
      std::copy(truth.data.begin(), truth.data.end(), f.member_frame(m, t));
  }
  EvaluateOptions opt;
  opt.windows = {{1, 2}};
  const MetricsReport rep = evaluate(f, opt);
  for (double v : rep.vrmse_tc) CHECK(v == 0.0);
  for (double v : rep.crps_tc) CHECK(v == 0.0);
  for (double v : rep.coherence_tcb) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rep.window_mean("vrmse", {1, 2}, 0) == 0.0);
}

TEST_CASE("evaluate matches a brute-force recomputation") {
  EnsembleForecast f;
  f.members_m = 2;
  f.steps_t = 2;
  f.channels = 1;
  f.height = 8;
  f.width = 8;
  f.failure_steps = {-1, -1};
  const std::size_t frame = f.frame_size();
  f.members.resize(2 * 2 * frame);
  PhiloxRng rng(55);
  for (double& v : f.members) v = rng.next_normal();
  for (int t = 0; t < 2; ++t) {
    Field truth(1, 8, 8);
    for (double& v : truth.data) v = rng.next_normal();
    f.truth.push_back(truth);
  }
  EvaluateOptions opt;
  opt.windows = {{1, 2}};
  const MetricsReport rep = evaluate(f, opt);

  const BandSpec bands = make_log_bands(4);
  for (int t = 0; t < 2; ++t) {
    std::vector<std::vector<double>> members;
    std::vector<double> mean(frame, 0.0);
    for (int m = 0; m < 2; ++m) {
      const double* p = f.member_frame(m, t);
      members.emplace_back(p, p + frame);
      for (std::size_t i = 0; i < frame; ++i) mean[i] += p[i] / 2.0;
    }
    const std::vector<double>& truth = f.truth[t].data;
    CHECK(rep.vrmse_at(t, 0) == doctest::Approx(oracle_vrmse(truth, mean)).epsilon(1e-12));
    CHECK(rep.crps_at(t, 0) == doctest::Approx(oracle_crps(truth, members)).epsilon(1e-12));
    const std::vector<double> gamma = oracle_coherence(truth, mean, 8, 8);
    const auto rmse = band_rmse_from_table(gamma, bands);
    for (int b = 0; b < 3; ++b)
      CHECK(rep.coherence_at(t, 0, b) == doctest::Approx(rmse[b]).epsilon(1e-12));
  }
  // window aggregate equals the mean of per-step values
  CHECK(rep.window_mean("vrmse", {1, 2}, 0) ==
        doctest::Approx(0.5 * (rep.vrmse_at(0, 0) + rep.vrmse_at(1, 0))).epsilon(1e-14));
}

TEST_CASE("evaluate rejects bad windows and M=1") {
  EnsembleForecast f;
  f.members_m = 1;
  f.steps_t = 1;
  f.channels = 1;
  f.height = 8;
  f.width = 8;
  f.failure_steps = {-1};
  f.members.resize(f.frame_size());
  f.truth.emplace_back(1, 8, 8);
  EvaluateOptions opt;
  CHECK_THROWS_AS(static_cast<void>(evaluate(f, opt)), std::invalid_argument);

  f.members_m = 2;
  f.members.resize(2 * f.frame_size());
  opt.windows = {{1, 5}};
  CHECK_THROWS_AS(static_cast<void>(evaluate(f, opt)), std::invalid_argument);
}
