#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "wfm/field.hpp"
#include "wfm/rng.hpp"
#include "wfm/tensor_io.hpp"

using namespace wfm;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

Field make_field(int c, int h, int w, std::uint64_t seed) {
  Field f(c, h, w);
  PhiloxRng rng(seed);
  for (double& v : f.data) v = rng.next_normal();
  return f;
}

}  // namespace

TEST_CASE("standardize centering identity") {
  Field f(2, 1, 2);
  f.data = {3.0, 3.0, 15.0, 15.0};
  Standardizer s{{3.0, 15.0}, {1.0, 5.0}};
  const Field out = standardize(f, s);
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("standardize identity transform") {
  const Field f = make_field(3, 4, 4, 7);
  Standardizer s{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
  const Field out = standardize(f, s);
  for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(out.data[i] == f.data[i]);
}

TEST_CASE("standardize hand example") {
  Field f(2, 1, 2);
  f.data = {2.0, 4.0, 10.0, 20.0};
  Standardizer s{{3.0, 15.0}, {1.0, 5.0}};
  const Field out = standardize(f, s);
  CHECK(out.data[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(out.data[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(out.data[2] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(out.data[3] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("destandardize inverts standardize") {
  const Field f = make_field(2, 8, 8, 13);
  Standardizer s{{0.3, -2.0}, {1.7, 0.25}};
  const Field round = destandardize(standardize(f, s), s);
  for (std::size_t i = 0; i < f.data.size(); ++i)
    CHECK(round.data[i] == doctest::Approx(f.data[i]).epsilon(1e-12));

  const Field round2 = standardize(destandardize(f, s), s);
  for (std::size_t i = 0; i < f.data.size(); ++i)
    CHECK(round2.data[i] == doctest::Approx(f.data[i]).epsilon(1e-12));
}

TEST_CASE("destandardize hand examples") {
  Field zero(1, 1, 2);
  const Field c3 = destandardize(zero, Standardizer{{3.0}, {2.0}});
  CHECK(c3.data[0] == 3.0);
  CHECK(c3.data[1] == 3.0);

  Field f(1, 1, 2);
  f.data = {-1.0, 1.0};
  const Field out = destandardize(f, Standardizer{{3.0}, {1.0}});
  CHECK(out.data[0] == 2.0);
  CHECK(out.data[1] == 4.0);
}

TEST_CASE("standardizer errors") {
  const Field f = make_field(2, 2, 2, 1);
  CHECK_THROWS_AS(standardize(f, Standardizer{{0.0}, {1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(standardize(f, Standardizer{{0.0, 0.0}, {1.0, 0.0}}), std::invalid_argument);
  CHECK_THROWS_AS(standardize(f, Standardizer{{0.0, 0.0}, {1.0, -2.0}}), std::invalid_argument);
}

TEST_CASE("fitted standardizer normalizes its own data") {
  Trajectory t;
  t.dt = 1.0;
  for (int i = 0; i < 6; ++i) {
    Field f = make_field(3, 8, 8, 100 + i);
    for (double& v : f.data) v = 2.5 * v - 4.0;
    t.frames.push_back(std::move(f));
  }
  const Standardizer s = fit_standardizer({&t});
  // standardized data has per-channel mean ~0 and std ~1
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const Field& f : t.frames) {
      const Field z = standardize(f, s);
      const std::size_t plane = static_cast<std::size_t>(z.height) * z.width;
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = z.data[c * plane + i];
        sum += v;
        sq += v * v;
      }
      n += plane;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(sd - 1.0) < 1e-10);
  }
}

TEST_CASE("tensor file rank-1 round trip") {
  const std::string path = temp_path("wfm_rank1.wfmt");
  const std::uint64_t shape[1] = {1};
  const double data[1] = {3.5};
  write_tensor(path, shape, std::span<const double>(data, 1));
  const TensorFile t = read_tensor(path);
  CHECK(t.dtype == Dtype::F64);
  REQUIRE(t.shape.size() == 1);
  CHECK(t.shape[0] == 1);
  CHECK(t.f64[0] == 3.5);
  std::remove(path.c_str());
}

TEST_CASE("tensor file f32 round trip") {
  const std::string path = temp_path("wfm_f32.wfmt");
  const std::uint64_t shape[2] = {2, 3};
  const float data[6] = {1.f, -2.5f, 3.25f, 0.f, 1e-20f, 4e7f};
  write_tensor(path, shape, std::span<const float>(data, 6));
  const TensorFile t = read_tensor(path);
  CHECK(t.dtype == Dtype::F32);
  REQUIRE(t.f32.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(t.f32[i] == data[i]);
  std::remove(path.c_str());
}

TEST_CASE("tensor file random round trips, ranks 1-5") {
  PhiloxRng rng(42);
  for (int rank = 1; rank <= 5; ++rank) {
    std::vector<std::uint64_t> shape;
    std::uint64_t n = 1;
    for (int r = 0; r < rank; ++r) {
      const std::uint64_t d = 1 + static_cast<std::uint64_t>(rng.next_uniform() * 4.0);
      shape.push_back(d);
      n *= d;
    }
    std::vector<double> data(n);
    for (double& v : data) v = rng.next_normal();
    const std::string path = temp_path("wfm_rt_" + std::to_string(rank) + ".wfmt");
    write_tensor(path, shape, std::span<const double>(data));
    const TensorFile t = read_tensor(path);
    CHECK(t.shape == shape);
    REQUIRE(t.f64.size() == n);
    for (std::size_t i = 0; i < n; ++i) CHECK(t.f64[i] == data[i]);  // bit-exact
    std::remove(path.c_str());
  }
}

TEST_CASE("tensor file rejects rank 0 and bad shapes") {
  const std::string path = temp_path("wfm_bad.wfmt");
  const double data[1] = {1.0};
  CHECK_THROWS_AS(write_tensor(path, std::span<const std::uint64_t>(), std::span<const double>(data, 1)),
                  std::invalid_argument);
  const std::uint64_t shape[1] = {2};
  CHECK_THROWS_AS(write_tensor(path, shape, std::span<const double>(data, 1)),
                  std::invalid_argument);
}

TEST_CASE("tensor file wrong magic is a format error") {
  const std::string path = temp_path("wfm_magic.wfmt");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE" << std::string(64, '\0');
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(read_tensor(path)),
                       doctest::Contains("bad magic"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("tensor file truncation is detected") {
  const std::string path = temp_path("wfm_trunc.wfmt");
  const std::uint64_t shape[1] = {8};
  std::vector<double> data(8, 1.25);
  write_tensor(path, shape, std::span<const double>(data));
  std::filesystem::resize_file(path, 40);
  CHECK_THROWS_AS(static_cast<void>(read_tensor(path)), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("field invariants") {
  CHECK_THROWS_AS(Field(0, 2, 2), std::invalid_argument);
  Field f(1, 2, 2);
  CHECK(f.all_finite());
  f.data[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK(!f.all_finite());

  ParamVector p{{1.0}, {"nu", "extra"}};
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}
