#pragma once

#include <complex>
#include <cstdint>

// Thin FFTW wrapper. Plans are created once per size and shared; execution
// uses the new-array interface so concurrent calls are safe.

namespace eva::fft {

template <typename Real>
void rfft(int n, const Real* in, std::complex<Real>* out);

/// Unnormalized inverse: out[t] = sum_k X[k] e^{+2 pi i k t / n} over the
/// Hermitian extension of the n/2+1 input bins.
template <typename Real>
void irfft(int n, const std::complex<Real>* in, Real* out);

}  // namespace eva::fft
