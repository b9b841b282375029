#include "cgmmsep/spatial.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cgmmsep/error.hpp"
#include "packed.hpp"

namespace cgmm {

void ArrayGeometry::validate() const {
  if (mic_positions.empty()) throw Error(ErrorKind::kInvalidConfig, "array needs at least one mic");
  for (const auto& p : mic_positions) {
    if (!p.allFinite()) throw Error(ErrorKind::kInvalidConfig, "mic position is not finite");
  }
  if (!(speed_of_sound > 0.0)) throw Error(ErrorKind::kInvalidConfig, "speed of sound must be > 0");
}

ArrayGeometry ArrayGeometry::uniform_circular(std::size_t num_mics, double diameter,
                                              double speed_of_sound) {
  ArrayGeometry g;
  g.speed_of_sound = speed_of_sound;
  const double radius = diameter / 2.0;
  for (std::size_t m = 0; m < num_mics; ++m) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(num_mics);
    g.mic_positions.emplace_back(radius * std::cos(a), radius * std::sin(a), 0.0);
  }
  return g;
}

double circular_distance_deg(double a, double b) {
  double diff = std::fmod(std::abs(a - b), 360.0);
  return diff > 180.0 ? 360.0 - diff : diff;
}

std::size_t DirectionGrid::nearest(double azimuth_deg) const {
  std::size_t best = 0;
  double best_dist = 1e300;
  for (std::size_t d = 0; d < count; ++d) {
    const double dist = circular_distance_deg(azimuth(d), azimuth_deg);
    if (dist < best_dist) {
      best_dist = dist;
      best = d;
    }
  }
  return best;
}

void DirectionGrid::validate() const {
  if (count == 0) throw Error(ErrorKind::kInvalidConfig, "direction grid is empty");
  if (!(start_deg >= 0.0 && start_deg < 360.0)) {
    throw Error(ErrorKind::kInvalidConfig, "grid start must lie in [0, 360)");
  }
  if (count > 1 && !(step_deg > 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "grid step must be positive");
  }
  if (azimuth(count - 1) >= 360.0) {
    throw Error(ErrorKind::kInvalidConfig, "grid azimuths must stay below 360 degrees");
  }
}

void Hyperparams::validate(std::size_t num_mics) const {
  if (!(nu > static_cast<double>(num_mics))) {
    throw Error(ErrorKind::kInvalidConfig, "nu must exceed the number of microphones");
  }
  if (!(epsilon > 0.0)) throw Error(ErrorKind::kInvalidConfig, "epsilon must be positive");
}

ComplexVector steering_vector(const ArrayGeometry& geom, double azimuth_deg, double f_hz) {
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const Eigen::Vector3d toward(std::cos(az), std::sin(az), 0.0);
  ComplexVector h(static_cast<Eigen::Index>(geom.num_mics()));
  for (std::size_t m = 0; m < geom.num_mics(); ++m) {
    const double tau = -geom.mic_positions[m].dot(toward) / geom.speed_of_sound;
    const double phase = -2.0 * std::numbers::pi * f_hz * tau;
    h(static_cast<Eigen::Index>(m)) = std::polar(1.0, phase);
  }
  return h;
}

SteeringTemplate::SteeringTemplate(std::size_t bins, std::size_t directions, std::size_t mics,
                                   double epsilon)
    : bins_(bins),
      directions_(directions),
      mics_(mics),
      epsilon_(epsilon),
      vectors_(bins * directions),
      scms_(bins * directions),
      inverses_(bins * directions),
      log_dets_(bins * directions, 0.0) {}

SteeringTemplate build_templates(const ArrayGeometry& geom, const DirectionGrid& grid,
                                 std::size_t bins, int sample_rate, double epsilon) {
  geom.validate();
  grid.validate();
  if (!(epsilon > 0.0)) throw Error(ErrorKind::kInvalidConfig, "epsilon must be positive");
  if (bins < 2) throw Error(ErrorKind::kInvalidConfig, "need at least two frequency bins");
  const std::size_t mics = geom.num_mics();
  const auto mm = static_cast<Eigen::Index>(mics);
  const double window_len = 2.0 * static_cast<double>(bins - 1);
  SteeringTemplate tpl(bins, grid.size(), mics, epsilon);
  const ComplexMatrix eye = ComplexMatrix::Identity(mm, mm);
  for (std::size_t f = 0; f < bins; ++f) {
    const double f_hz = static_cast<double>(f) * sample_rate / window_len;
    for (std::size_t d = 0; d < grid.size(); ++d) {
      const std::size_t i = f * grid.size() + d;
      ComplexVector h = steering_vector(geom, grid.azimuth(d), f_hz);
      const double energy = h.squaredNorm();
      tpl.scms_[i] = h * h.adjoint() + epsilon * eye;
      // (eps I + h h^H)^{-1} = (I - h h^H / (eps + |h|^2)) / eps
      tpl.inverses_[i] = (eye - h * h.adjoint() / (epsilon + energy)) / epsilon;
      tpl.log_dets_[i] = std::log(epsilon + energy) + static_cast<double>(mics - 1) * std::log(epsilon);
      tpl.vectors_[i] = std::move(h);
    }
  }
  return tpl;
}

double hermitian_quad(std::span<const Complex> x, const ComplexMatrix& a) {
  const auto n = static_cast<Eigen::Index>(x.size());
  if (a.rows() != n || a.cols() != n) throw Error(ErrorKind::kDimension, "quadratic form size mismatch");
  double acc = 0.0;
  for (Eigen::Index m = 0; m < n; ++m) {
    acc += a(m, m).real() * std::norm(x[static_cast<std::size_t>(m)]);
    for (Eigen::Index k = m + 1; k < n; ++k) {
      acc += 2.0 * (std::conj(x[static_cast<std::size_t>(m)]) * a(m, k) * x[static_cast<std::size_t>(k)]).real();
    }
  }
  return acc;
}

double log_cgauss(std::span<const Complex> x, const ComplexMatrix& sigma_inv, double log_det_sigma) {
  for (const auto& v : x) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
      throw Error(ErrorKind::kNumeric, "non-finite observation in log_cgauss");
    }
  }
  if (!std::isfinite(log_det_sigma)) throw Error(ErrorKind::kNumeric, "non-finite log-determinant");
  const double dims = static_cast<double>(x.size());
  return -dims * std::log(std::numbers::pi) - log_det_sigma - hermitian_quad(x, sigma_inv);
}

TemplateLogLik template_loglik(const Spectrogram& x, const SteeringTemplate& tpl) {
  if (x.bins != tpl.bins() || x.channels != tpl.mics()) {
    throw Error(ErrorKind::kDimension, "spectrogram does not match the steering template");
  }
  const auto packed = detail::pack_outer_products(x);
  auto table = detail::quad_table(packed, tpl.inverses(), tpl.directions());
  const double log_pi_m = static_cast<double>(x.channels) * std::log(std::numbers::pi);
  for (std::size_t f = 0; f < x.bins; ++f) {
    for (std::size_t d = 0; d < tpl.directions(); ++d) {
      auto col = table[f].col(static_cast<Eigen::Index>(d));
      col = (-col.array() - log_pi_m - tpl.log_det(f, d)).matrix();
    }
  }
  return table;
}

Eigen::MatrixXd omega_features(const TemplateLogLik& loglik, const MaskPosterior& z) {
  if (loglik.size() != z.bins || (z.bins > 0 && static_cast<std::size_t>(loglik[0].rows()) != z.frames)) {
    throw Error(ErrorKind::kDimension, "mask shape does not match the log-likelihood table");
  }
  const Eigen::Index directions = z.bins > 0 ? loglik[0].cols() : 0;
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(z.sources), directions);
  Eigen::MatrixXd zf(static_cast<Eigen::Index>(z.frames), static_cast<Eigen::Index>(z.sources));
  for (std::size_t f = 0; f < z.bins; ++f) {
    for (std::size_t t = 0; t < z.frames; ++t) {
      for (std::size_t k = 0; k < z.sources; ++k) {
        zf(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = z(t, f, k);
      }
    }
    omega.noalias() += zf.transpose() * loglik[f];
  }
  return omega;
}

Eigen::MatrixXd omega_features(const Spectrogram& x, const MaskPosterior& z,
                               const SteeringTemplate& tpl) {
  if (z.frames != x.frames || z.bins != x.bins) {
    throw Error(ErrorKind::kDimension, "mask shape does not match the spectrogram");
  }
  return omega_features(template_loglik(x, tpl), z);
}

}  // namespace cgmm
