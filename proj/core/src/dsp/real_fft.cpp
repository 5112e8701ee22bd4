#include "real_fft.hpp"

#include <cstring>
#include <mutex>

namespace tts::dsp::detail {
namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  std::lock_guard lock(planner_mutex());
  real_ = fftw_alloc_real(n);
  spec_ = fftw_alloc_complex(n / 2 + 1);
  fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_, spec_, FFTW_ESTIMATE);
  bwd_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec_, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(fwd_);
  fftw_destroy_plan(bwd_);
  fftw_free(real_);
  fftw_free(spec_);
}

void RealFft::forward(const double* in, std::complex<double>* out) {
  std::memcpy(real_, in, n_ * sizeof(double));
  fftw_execute(fwd_);
  std::memcpy(static_cast<void*>(out), spec_, (n_ / 2 + 1) * sizeof(fftw_complex));
}

void RealFft::inverse(const std::complex<double>* in, double* out) {
  std::memcpy(spec_, in, (n_ / 2 + 1) * sizeof(fftw_complex));
  fftw_execute(bwd_);
  const double s = 1.0 / static_cast<double>(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = real_[i] * s;
}

}  // namespace tts::dsp::detail
