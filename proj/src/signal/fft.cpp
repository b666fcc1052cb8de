#include "fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <vector>

namespace eva::fft {

namespace {

std::mutex plan_mutex;

template <typename Real>
struct Traits;

template <>
struct Traits<double> {
  using plan = fftw_plan;
  static plan make_r2c(int n) {
    std::vector<double> a(n);
    std::vector<fftw_complex> b(n / 2 + 1);
    return fftw_plan_dft_r2c_1d(n, a.data(), b.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static plan make_c2r(int n) {
    std::vector<fftw_complex> a(n / 2 + 1);
    std::vector<double> b(n);
    return fftw_plan_dft_c2r_1d(n, a.data(), b.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static void r2c(plan p, const double* in, std::complex<double>* out) {
    fftw_execute_dft_r2c(p, const_cast<double*>(in), reinterpret_cast<fftw_complex*>(out));
  }
  static void c2r(plan p, std::complex<double>* in, double* out) {
    fftw_execute_dft_c2r(p, reinterpret_cast<fftw_complex*>(in), out);
  }
};

template <>
struct Traits<float> {
  using plan = fftwf_plan;
  static plan make_r2c(int n) {
    std::vector<float> a(n);
    std::vector<fftwf_complex> b(n / 2 + 1);
    return fftwf_plan_dft_r2c_1d(n, a.data(), b.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static plan make_c2r(int n) {
    std::vector<fftwf_complex> a(n / 2 + 1);
    std::vector<float> b(n);
    return fftwf_plan_dft_c2r_1d(n, a.data(), b.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static void r2c(plan p, const float* in, std::complex<float>* out) {
    fftwf_execute_dft_r2c(p, const_cast<float*>(in), reinterpret_cast<fftwf_complex*>(out));
  }
  static void c2r(plan p, std::complex<float>* in, float* out) {
    fftwf_execute_dft_c2r(p, reinterpret_cast<fftwf_complex*>(in), out);
  }
};

template <typename Real>
typename Traits<Real>::plan get_plan(int n, bool inverse) {
  static std::map<std::pair<int, bool>, typename Traits<Real>::plan> cache;
  std::lock_guard<std::mutex> lock(plan_mutex);
  auto it = cache.find({n, inverse});
  if (it != cache.end()) return it->second;
  auto p = inverse ? Traits<Real>::make_c2r(n) : Traits<Real>::make_r2c(n);
  cache.emplace(std::make_pair(n, inverse), p);
  return p;
}

}  // namespace

template <typename Real>
void rfft(int n, const Real* in, std::complex<Real>* out) {
  Traits<Real>::r2c(get_plan<Real>(n, false), in, out);
}

template <typename Real>
void irfft(int n, const std::complex<Real>* in, Real* out) {
  // c2r destroys its input.
  std::vector<std::complex<Real>> scratch(in, in + n / 2 + 1);
  Traits<Real>::c2r(get_plan<Real>(n, true), scratch.data(), out);
}

template void rfft<float>(int, const float*, std::complex<float>*);
template void rfft<double>(int, const double*, std::complex<double>*);
template void irfft<float>(int, const std::complex<float>*, float*);
template void irfft<double>(int, const std::complex<double>*, double*);

}  // namespace eva::fft
