#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cgmmsep/posterior.hpp"
#include "cgmmsep/signal.hpp"

namespace cgmm {

using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;

struct ArrayGeometry {
  std::vector<Eigen::Vector3d> mic_positions;
  double speed_of_sound = 343.0;

  std::size_t num_mics() const { return mic_positions.size(); }
  void validate() const;

  // num_mics microphones evenly spaced on a horizontal circle, the first on +x.
  static ArrayGeometry uniform_circular(std::size_t num_mics, double diameter,
                                        double speed_of_sound = 343.0);
};

// Uniform azimuth grid on the horizontal plane, in degrees.
struct DirectionGrid {
  double start_deg = 0.0;
  double step_deg = 5.0;
  std::size_t count = 72;

  std::size_t size() const { return count; }
  double azimuth(std::size_t d) const { return start_deg + step_deg * static_cast<double>(d); }
  // Grid index with the smallest circular distance to azimuth_deg.
  std::size_t nearest(double azimuth_deg) const;
  void validate() const;
};

struct Hyperparams {
  double nu = 9.0;
  double epsilon = 1e-2;

  static Hyperparams defaults(std::size_t num_mics) {
    return {static_cast<double>(num_mics) + 5.0, 1e-2};
  }
  void validate(std::size_t num_mics) const;
};

// Smallest absolute angle between two azimuths, in [0, 180].
double circular_distance_deg(double a, double b);

// Plane-wave steering vector, h_m = exp(-j 2 pi f tau_m), tau_m = -(r_m . u) / c.
ComplexVector steering_vector(const ArrayGeometry& geom, double azimuth_deg, double f_hz);

// Template steering vectors and SCMs G_fd = h h^H + eps I, with Sherman-Morrison
// inverses and closed-form log-determinants. Immutable once built.
class SteeringTemplate {
 public:
  SteeringTemplate() = default;
  SteeringTemplate(std::size_t bins, std::size_t directions, std::size_t mics, double epsilon);

  std::size_t bins() const { return bins_; }
  std::size_t directions() const { return directions_; }
  std::size_t mics() const { return mics_; }
  double epsilon() const { return epsilon_; }

  const ComplexVector& vector(std::size_t f, std::size_t d) const { return vectors_[f * directions_ + d]; }
  const ComplexMatrix& scm(std::size_t f, std::size_t d) const { return scms_[f * directions_ + d]; }
  const ComplexMatrix& inverse(std::size_t f, std::size_t d) const { return inverses_[f * directions_ + d]; }
  double log_det(std::size_t f, std::size_t d) const { return log_dets_[f * directions_ + d]; }

  const std::vector<ComplexMatrix>& scms() const { return scms_; }
  const std::vector<ComplexMatrix>& inverses() const { return inverses_; }
  const std::vector<double>& log_dets() const { return log_dets_; }

 private:
  friend SteeringTemplate build_templates(const ArrayGeometry&, const DirectionGrid&, std::size_t,
                                          int, double);

  std::size_t bins_ = 0;
  std::size_t directions_ = 0;
  std::size_t mics_ = 0;
  double epsilon_ = 0.0;
  std::vector<ComplexVector> vectors_;
  std::vector<ComplexMatrix> scms_;
  std::vector<ComplexMatrix> inverses_;
  std::vector<double> log_dets_;
};

// Bin f sits at f * sample_rate / window_len Hz, window_len = 2 (bins - 1).
SteeringTemplate build_templates(const ArrayGeometry& geom, const DirectionGrid& grid,
                                 std::size_t bins, int sample_rate, double epsilon);

// Re(x^H A x) for Hermitian A.
double hermitian_quad(std::span<const Complex> x, const ComplexMatrix& a);

// log N_c(x; 0, Sigma) given Sigma^{-1} and log|Sigma|.
double log_cgauss(std::span<const Complex> x, const ComplexMatrix& sigma_inv, double log_det_sigma);

// log N_c(x_tf; 0, G_fd) for every (t, f, d); one T x D matrix per bin.
using TemplateLogLik = std::vector<Eigen::MatrixXd>;
TemplateLogLik template_loglik(const Spectrogram& x, const SteeringTemplate& tpl);

// omega_kd = sum_{t,f} z_tfk log N_c(x_tf; 0, G_fd), a K x D matrix.
Eigen::MatrixXd omega_features(const Spectrogram& x, const MaskPosterior& z,
                               const SteeringTemplate& tpl);
Eigen::MatrixXd omega_features(const TemplateLogLik& loglik, const MaskPosterior& z);

}  // namespace cgmm
