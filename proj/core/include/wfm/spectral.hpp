// 2-D discrete Fourier transforms: a direct O(N^2)-per-axis reference and
// a radix-2 FFT for dyadic sizes. Unnormalized forward convention; the
// inverse divides by H*W.

#pragma once

#include <complex>
#include <vector>

namespace wfm {

using Complex = std::complex<double>;

// Row-major (H, W) -> (H, W) spectrum, unnormalized forward.
std::vector<Complex> dft2_direct(const std::vector<double>& data, int height, int width);

// Radix-2 FFT path; height and width must be powers of two.
std::vector<Complex> fft2(const std::vector<Complex>& data, int height, int width, bool inverse);
std::vector<Complex> fft2_real(const std::vector<double>& data, int height, int width);

// Dispatches to the FFT for dyadic sizes, direct transform otherwise.
std::vector<Complex> dft2(const std::vector<double>& data, int height, int width);

}  // namespace wfm
