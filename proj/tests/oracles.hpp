#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <tuple>
#include <vector>

#include "cgmmsep/em.hpp"
#include "cgmmsep/simulate.hpp"
#include "helpers.hpp"

namespace oracle {

using namespace cgmm;

inline ModelParams random_params(std::size_t T, std::size_t F, std::size_t K, std::size_t D, std::size_t M,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.3, 2.0);
  ModelParams p;
  p.frames = T, p.bins = F, p.sources = K, p.directions = D, p.mics = M;
  for (std::size_t i = 0; i < F * D; ++i) p.scm.push_back(testutil::random_hpd(M, rng));
  p.psd.resize(T * F * K);
  for (auto& v : p.psd) v = u(rng);
  p.activation.resize(T * K);
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += (p.pi(t, k) = u(rng));
    for (std::size_t k = 0; k < K; ++k) p.pi(t, k) /= s;
  }
  p.direction_prior.resize(D);
  double s = 0.0;
  for (auto& v : p.direction_prior) s += (v = u(rng));
  for (auto& v : p.direction_prior) v /= s;
  p.hyper = Hyperparams::defaults(M);
  return p;
}

// N_c(x; 0, lambda H) evaluated densely.
inline double density(const Eigen::VectorXcd& x, const Eigen::MatrixXcd& H, double lambda) {
  return std::exp(testutil::dense_log_cgauss(x, lambda * H));
}

// q(z_tf = k) proportional to pi_tk prod_d N_c(x_tf; 0, lambda_tfk H_fd)^ew_kd.
inline MaskPosterior brute_force_masks(const Spectrogram& x, const ModelParams& p, const DoaPosterior& ew) {
  MaskPosterior ez(p.frames, p.bins, p.sources);
  for (std::size_t t = 0; t < p.frames; ++t) {
    for (std::size_t f = 0; f < p.bins; ++f) {
      const auto v = testutil::bin_vector(x, t, f);
      double total = 0.0;
      for (std::size_t k = 0; k < p.sources; ++k) {
        double w = p.pi(t, k);
        for (std::size_t d = 0; d < p.directions; ++d) {
          w *= std::pow(density(v, p.scm[f * p.directions + d], p.lambda(t, f, k)), ew(k, d));
        }
        total += (ez(t, f, k) = w);
      }
      for (std::size_t k = 0; k < p.sources; ++k) ez(t, f, k) /= total;
    }
  }
  return ez;
}

// q(w_k = d) proportional to phi_d prod_tf N_c(x_tf; 0, lambda_tfk H_fd)^ez_tfk.
inline DoaPosterior brute_force_doa(const Spectrogram& x, const ModelParams& p, const MaskPosterior& ez) {
  DoaPosterior ew(p.sources, p.directions);
  for (std::size_t k = 0; k < p.sources; ++k) {
    double total = 0.0;
    for (std::size_t d = 0; d < p.directions; ++d) {
      double w = p.direction_prior[d];
      for (std::size_t t = 0; t < p.frames; ++t) {
        for (std::size_t f = 0; f < p.bins; ++f) {
          w *= std::pow(density(testutil::bin_vector(x, t, f), p.scm[f * p.directions + d], p.lambda(t, f, k)),
                        ez(t, f, k));
        }
      }
      total += (ew(k, d) = w);
    }
    for (std::size_t d = 0; d < p.directions; ++d) ew(k, d) /= total;
  }
  return ew;
}

struct LatticeImage {
  Eigen::Vector3d position;
  int reflections;
};

// Mirrors the source across the six walls recursively, keeping the fewest
// reflections that reach each image position.
inline std::vector<LatticeImage> mirrored_images(const Eigen::Vector3d& dims, const Eigen::Vector3d& src, int max_order) {
  std::map<std::tuple<long, long, long>, LatticeImage> seen;
  auto key = [](const Eigen::Vector3d& p) {
    return std::make_tuple(std::lround(p(0) * 1e6), std::lround(p(1) * 1e6), std::lround(p(2) * 1e6));
  };
  std::vector<LatticeImage> frontier{{src, 0}};
  seen.emplace(key(src), frontier.front());
  for (int depth = 1; depth <= max_order; ++depth) {
    std::vector<LatticeImage> next;
    for (const auto& img : frontier) {
      for (int axis = 0; axis < 3; ++axis) {
        for (double wall : {0.0, dims(axis)}) {
          Eigen::Vector3d p = img.position;
          p(axis) = 2.0 * wall - p(axis);
          if (seen.count(key(p))) continue;
          LatticeImage child{p, depth};
          seen.emplace(key(p), child);
          next.push_back(child);
        }
      }
    }
    frontier = std::move(next);
  }
  std::vector<LatticeImage> out;
  for (const auto& [k, v] : seen) out.push_back(v);
  return out;
}

inline double hann_sinc(double arg) {
  if (std::abs(arg) > 40.5) return 0.0;
  const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * arg / 41.0));
  return arg == 0.0 ? w : w * std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
}

inline std::vector<double> oracle_rir(const Room& room, const Eigen::Vector3d& src, const Eigen::Vector3d& mic, int fs,
                               std::size_t length) {
  std::vector<double> h(length, 0.0);
  const double r = std::sqrt(1.0 - room.absorption);
  for (const auto& img : mirrored_images(room.dims, src, room.max_order)) {
    const double dist = (img.position - mic).norm();
    const double gain = std::pow(r, img.reflections) / (4.0 * std::numbers::pi * dist);
    const double delay = dist / 343.0 * fs;
    const long c = std::lround(delay);
    for (long i = c - 40; i <= c + 40; ++i) {
      if (i >= 0 && i < static_cast<long>(length)) h[static_cast<std::size_t>(i)] += gain * hann_sinc(static_cast<double>(i) - delay);
    }
  }
  return h;
}

inline double energy(const std::vector<double>& h) {
  double e = 0.0;
  for (double v : h) e += v * v;
  return e;
}

}  // namespace oracle
