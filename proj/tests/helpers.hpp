#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <Eigen/Dense>

#include "cgmmsep/error.hpp"
#include "cgmmsep/posterior.hpp"
#include "cgmmsep/signal.hpp"
#include "cgmmsep/spatial.hpp"

namespace testutil {

using cgmm::Complex;

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

inline cgmm::Spectrogram random_spectrogram(std::size_t T, std::size_t F, std::size_t M, std::uint64_t seed,
                                            double scale = 1.0) {
  cgmm::Spectrogram x(T, F, M, 4, static_cast<int>(2 * (F - 1)), 8000);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (auto& v : x.values) v = Complex(g(rng), g(rng));
  return x;
}

inline cgmm::MaskPosterior random_masks(std::size_t T, std::size_t F, std::size_t K, std::uint64_t seed) {
  cgmm::MaskPosterior z(T, F, K);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += (z(t, f, k) = u(rng));
      for (std::size_t k = 0; k < K; ++k) z(t, f, k) /= s;
    }
  }
  return z;
}

inline cgmm::DoaPosterior random_doa(std::size_t K, std::size_t D, std::uint64_t seed) {
  cgmm::DoaPosterior w(K, D);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += (w(k, d) = u(rng));
    for (std::size_t d = 0; d < D; ++d) w(k, d) /= s;
  }
  return w;
}

inline Eigen::MatrixXcd random_hpd(std::size_t M, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXcd a(M, M);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = Complex(g(rng), g(rng));
  }
  return a * a.adjoint() + Eigen::MatrixXcd::Identity(M, M);
}

// Dense log N_c(x; 0, S) straight from the definition.
inline double dense_log_cgauss(const Eigen::VectorXcd& x, const Eigen::MatrixXcd& S) {
  const double M = static_cast<double>(x.size());
  const double logdet = std::log(S.determinant().real());
  const double quad = (x.adjoint() * S.inverse() * x)(0, 0).real();
  return -M * std::log(M_PI) - logdet - quad;
}

inline Eigen::VectorXcd bin_vector(const cgmm::Spectrogram& x, std::size_t t, std::size_t f) {
  Eigen::VectorXcd v(x.channels);
  for (std::size_t m = 0; m < x.channels; ++m) v(static_cast<Eigen::Index>(m)) = x(t, f, m);
  return v;
}

// Unique scratch directory under the system temp folder.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cgmmsep_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
