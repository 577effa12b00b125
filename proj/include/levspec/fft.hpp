#pragma once

#include <complex>
#include <cstddef>
#include <span>

// Thin FFTW wrapper. Plans are cached per (kind, size) behind a mutex and
// executed on thread-local aligned scratch, so calls are safe from any thread.
// All transforms are unnormalized.
namespace levspec::fft {

using cplx = std::complex<double>;

// out[k] = sum_m in[m] exp(-2 pi i k m / n), k = 0 .. n/2. out.size() == n/2 + 1.
void forward_real(std::span<const double> in, std::span<cplx> out);

// Inverse of forward_real up to a factor n. in.size() == out.size()/2 + 1.
void inverse_real(std::span<const cplx> in, std::span<double> out);

// out[k] = sum_m in[m] exp(sign * 2 pi i k m / n), sign = -1 forward, +1 backward.
void forward(std::span<const cplx> in, std::span<cplx> out);
void backward(std::span<const cplx> in, std::span<cplx> out);

// Smallest n' >= n whose prime factors are all in {2, 3, 5, 7}.
std::size_t good_size(std::size_t n);

}  // namespace levspec::fft
