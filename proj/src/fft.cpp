#include "fft.hpp"

#include <map>
#include <mutex>
#include <vector>

namespace cgmm::detail {

namespace {
// The FFTW planner is not reentrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

RealFft::RealFft(int n) : n_(n) {
  std::vector<double> real(static_cast<std::size_t>(n));
  std::vector<fftw_complex> spec(static_cast<std::size_t>(n / 2 + 1));
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  forward_plan_ = fftw_plan_dft_r2c_1d(n, real.data(), spec.data(), flags);
  inverse_plan_ = fftw_plan_dft_c2r_1d(n, spec.data(), real.data(), flags);
}

RealFft::~RealFft() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(forward_plan_);
  fftw_destroy_plan(inverse_plan_);
}

void RealFft::forward(const double* in, std::complex<double>* out) const {
  std::vector<double> scratch(in, in + n_);
  fftw_execute_dft_r2c(forward_plan_, scratch.data(), reinterpret_cast<fftw_complex*>(out));
}

void RealFft::inverse(const std::complex<double>* in, double* out) const {
  // c2r overwrites its input.
  std::vector<std::complex<double>> scratch(in, in + n_ / 2 + 1);
  fftw_execute_dft_c2r(inverse_plan_, reinterpret_cast<fftw_complex*>(scratch.data()), out);
}

std::shared_ptr<const RealFft> real_fft(int n) {
  static std::map<int, std::shared_ptr<const RealFft>> cache;
  std::lock_guard<std::mutex> lock(planner_mutex());
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto plan = std::make_shared<const RealFft>(n);
  cache.emplace(n, plan);
  return plan;
}

}  // namespace cgmm::detail
