#include "wfm/spectral.hpp"

#include <numbers>
#include <stdexcept>

namespace wfm {
namespace {

bool is_pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT on a strided line.
void fft_line(Complex* p, int n, int stride, bool inverse) {
  // bit-reversal permutation
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(p[static_cast<std::size_t>(i) * stride], p[static_cast<std::size_t>(j) * stride]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / len;
    const Complex wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      Complex w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        Complex& a = p[static_cast<std::size_t>(i + k) * stride];
        Complex& b = p[static_cast<std::size_t>(i + k + len / 2) * stride];
        const Complex u = a, v = b * w;
        a = u + v;
        b = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace

std::vector<Complex> dft2_direct(const std::vector<double>& data, int height, int width) {
  if (data.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("dft2: size mismatch");
  // rows then columns, each a direct O(N^2) transform
  std::vector<Complex> tmp(data.size()), out(data.size());
  for (int y = 0; y < height; ++y) {
    for (int kx = 0; kx < width; ++kx) {
      Complex acc(0.0, 0.0);
      for (int x = 0; x < width; ++x) {
        const double ang = -2.0 * std::numbers::pi * kx * x / width;
        acc += data[static_cast<std::size_t>(y) * width + x] * Complex(std::cos(ang), std::sin(ang));
      }
      tmp[static_cast<std::size_t>(y) * width + kx] = acc;
    }
  }
  for (int kx = 0; kx < width; ++kx) {
    for (int ky = 0; ky < height; ++ky) {
      Complex acc(0.0, 0.0);
      for (int y = 0; y < height; ++y) {
        const double ang = -2.0 * std::numbers::pi * ky * y / height;
        acc += tmp[static_cast<std::size_t>(y) * width + kx] * Complex(std::cos(ang), std::sin(ang));
      }
      out[static_cast<std::size_t>(ky) * width + kx] = acc;
    }
  }
  return out;
}

std::vector<Complex> fft2(const std::vector<Complex>& data, int height, int width, bool inverse) {
  if (!is_pow2(height) || !is_pow2(width))
    throw std::invalid_argument("fft2: dimensions must be powers of two");
  if (data.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("fft2: size mismatch");
  std::vector<Complex> out = data;
  for (int y = 0; y < height; ++y) fft_line(out.data() + static_cast<std::size_t>(y) * width, width, 1, inverse);
  for (int x = 0; x < width; ++x) fft_line(out.data() + x, height, width, inverse);
  if (inverse) {
    const double scale = 1.0 / (static_cast<double>(height) * width);
    for (Complex& c : out) c *= scale;
  }
  return out;
}

std::vector<Complex> fft2_real(const std::vector<double>& data, int height, int width) {
  std::vector<Complex> c(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) c[i] = Complex(data[i], 0.0);
  return fft2(c, height, width, false);
}

std::vector<Complex> dft2(const std::vector<double>& data, int height, int width) {
  if (is_pow2(height) && is_pow2(width)) return fft2_real(data, height, width);
  return dft2_direct(data, height, width);
}

}  // namespace wfm
