#include <doctest.h>

#include <cmath>

#include "wfm/rng.hpp"

using namespace wfm;

TEST_CASE("philox determinism") {
  PhiloxRng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("philox seeds and streams differ") {
  PhiloxRng a(1), b(2), c(1, 1);
  CHECK(a.next_u64() != b.next_u64());
  PhiloxRng a2(1);
  CHECK(a2.next_u64() != c.next_u64());
}

TEST_CASE("split is a pure function of the label path") {
  const PhiloxRng root(7);
  PhiloxRng s1 = root.split(3).split(5);
  PhiloxRng s2 = root.split(3).split(5);
  for (int i = 0; i < 16; ++i) CHECK(s1.next_u64() == s2.next_u64());

  PhiloxRng other = root.split(5).split(3);  // order matters
  PhiloxRng s3 = root.split(3).split(5);
  CHECK(other.next_u64() != s3.next_u64());
}

TEST_CASE("uniform moments") {
  PhiloxRng rng(99);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sq += u * u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.005);
  CHECK(std::abs(sq / n - 1.0 / 3.0) < 0.005);
}

TEST_CASE("normal moments") {
  PhiloxRng rng(1234);
  const int n = 400000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.01);
}

TEST_CASE("split streams are uncorrelated") {
  const PhiloxRng root(55);
  PhiloxRng a = root.split(0), b = root.split(1);
  const int n = 100000;
  double xy = 0.0, x = 0.0, y = 0.0, xx = 0.0, yy = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = a.next_normal(), v = b.next_normal();
    xy += u * v;
    x += u;
    y += v;
    xx += u * u;
    yy += v * v;
  }
  const double corr = (xy / n - (x / n) * (y / n)) /
                      std::sqrt((xx / n - (x / n) * (x / n)) * (yy / n - (y / n) * (y / n)));
  CHECK(std::abs(corr) < 0.01);
}
