#pragma once

#include <complex>
#include <memory>

#include <fftw3.h>

namespace cgmm::detail {

// n-point real FFT backed by FFTW. Plans are created once per size and shared;
// execution with caller-provided buffers is thread safe.
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }

  // n reals -> n/2 + 1 bins, e^{-j 2 pi k n / N} convention.
  void forward(const double* in, std::complex<double>* out) const;
  // n/2 + 1 bins -> n reals, unnormalised.
  void inverse(const std::complex<double>* in, double* out) const;

 private:
  int n_;
  fftw_plan forward_plan_;
  fftw_plan inverse_plan_;
};

std::shared_ptr<const RealFft> real_fft(int n);

}  // namespace cgmm::detail
