#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include <fftw3.h>

namespace tts::dsp::detail {

// Owns a forward/backward real FFT pair of one size. FFTW planning is not thread-safe,
// so construction and destruction serialize on a process-wide mutex; execution does not.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  // in: n real samples -> out: n/2+1 bins (unnormalized).
  void forward(const double* in, std::complex<double>* out);
  // in: n/2+1 bins -> out: n samples, scaled by 1/n so inverse(forward(x)) == x.
  void inverse(const std::complex<double>* in, double* out);

 private:
  std::size_t n_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
};

}  // namespace tts::dsp::detail
