#include "cgmmsep/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "cgmmsep/error.hpp"
#include "cgmmsep/log.hpp"
#include "packed.hpp"

namespace cgmm {

namespace {

using Index = Eigen::Index;
using Table = std::vector<Eigen::MatrixXd>;

const double kLogPi = std::log(std::numbers::pi);

struct Factors {
  std::vector<ComplexMatrix> inverse;
  std::vector<double> log_det;
};

Factors factorize(const std::vector<ComplexMatrix>& scm, std::size_t directions) {
  Factors out;
  out.inverse.resize(scm.size());
  out.log_det.resize(scm.size());
  for (std::size_t i = 0; i < scm.size(); ++i) {
    Eigen::LLT<ComplexMatrix> llt(scm[i]);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorKind::kNumeric, "SCM is not positive definite at (f=" +
                                           std::to_string(i / directions) +
                                           ", d=" + std::to_string(i % directions) + ")");
    }
    const auto& lower = llt.matrixLLT();
    double log_det = 0.0;
    for (Index m = 0; m < lower.rows(); ++m) log_det += 2.0 * std::log(lower(m, m).real());
    ComplexMatrix inv = llt.solve(ComplexMatrix::Identity(scm[i].rows(), scm[i].cols()));
    out.inverse[i] = 0.5 * (inv + inv.adjoint());
    out.log_det[i] = log_det;
  }
  return out;
}

Eigen::MatrixXd ew_matrix(const DoaPosterior& ew) {
  Eigen::MatrixXd m(static_cast<Index>(ew.sources), static_cast<Index>(ew.directions));
  for (std::size_t k = 0; k < ew.sources; ++k) {
    for (std::size_t d = 0; d < ew.directions; ++d) m(static_cast<Index>(k), static_cast<Index>(d)) = ew(k, d);
  }
  return m;
}

// Normalises log weights in place into probabilities, flooring tiny entries.
// Returns false when every weight is -inf.
bool normalize_log_weights(double* w, std::size_t n, double floor) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(w[i])) throw Error(ErrorKind::kNumeric, "NaN log weight");
    peak = std::max(peak, w[i]);
  }
  if (peak == -std::numeric_limits<double>::infinity()) return false;
  if (peak == std::numeric_limits<double>::infinity()) throw Error(ErrorKind::kNumeric, "+inf log weight");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::exp(w[i] - peak);
    sum += w[i];
  }
  double renorm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::max(w[i] / sum, floor);
    renorm += w[i];
  }
  for (std::size_t i = 0; i < n; ++i) w[i] /= renorm;
  return true;
}

void check_shapes(const Spectrogram& x, const ModelParams& p) {
  if (p.frames != x.frames || p.bins != x.bins || p.mics != x.channels) {
    throw Error(ErrorKind::kDimension, "model parameters do not match the spectrogram");
  }
}

void check_mask(const Spectrogram& x, const MaskPosterior& ez) {
  if (ez.frames != x.frames || ez.bins != x.bins) {
    throw Error(ErrorKind::kDimension, "mask posterior does not match the spectrogram");
  }
}

double psi_scale(const Hyperparams& hyper, std::size_t mics, PriorScale scale) {
  return scale == PriorScale::kTemplate ? 1.0 : hyper.nu - static_cast<double>(mics);
}

// --- updates on precomputed quadratic-form tables -------------------------

MaskPosterior masks_from_quads(const Table& quads, const std::vector<double>& log_det,
                               const ModelParams& p, const DoaPosterior& ew, double floor,
                               EmDiagnostics* diag) {
  const std::size_t T = p.frames, F = p.bins, K = p.sources, D = p.directions;
  const double M = static_cast<double>(p.mics);
  const Eigen::MatrixXd ewm = ew_matrix(ew);
  const Eigen::VectorXd ew_mass = ewm.rowwise().sum();
  MaskPosterior ez(T, F, K);
  std::vector<double> logits(K);
  for (std::size_t f = 0; f < F; ++f) {
    const Eigen::MatrixXd qk = quads[f] * ewm.transpose();
    Eigen::VectorXd mean_log_det = Eigen::VectorXd::Zero(static_cast<Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t d = 0; d < D; ++d) mean_log_det(static_cast<Index>(k)) += ew(k, d) * log_det[f * D + d];
    }
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const double lam = p.lambda(t, f, k);
        const auto kk = static_cast<Index>(k);
        logits[k] = std::log(p.pi(t, k)) - ew_mass(kk) * M * (kLogPi + std::log(lam)) -
                    mean_log_det(kk) - qk(static_cast<Index>(t), kk) / lam;
      }
      if (!normalize_log_weights(logits.data(), K, floor)) {
        for (std::size_t k = 0; k < K; ++k) logits[k] = p.pi(t, k);
        if (diag != nullptr) ++diag->prior_fallback_bins;
      }
      for (std::size_t k = 0; k < K; ++k) ez(t, f, k) = logits[k];
    }
  }
  return ez;
}

DoaPosterior doa_from_quads(const Table& quads, const std::vector<double>& log_det,
                            const ModelParams& p, const MaskPosterior& ez, double floor) {
  const std::size_t T = p.frames, F = p.bins, K = p.sources, D = p.directions;
  // Terms constant over d (the -M log(pi lambda) part) cancel in the normalisation.
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(static_cast<Index>(K), static_cast<Index>(D));
  Eigen::MatrixXd weighted(static_cast<Index>(T), static_cast<Index>(K));
  for (std::size_t f = 0; f < F; ++f) {
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(static_cast<Index>(K));
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const double z = ez(t, f, k);
        weighted(static_cast<Index>(t), static_cast<Index>(k)) = z / p.lambda(t, f, k);
        mass(static_cast<Index>(k)) += z;
      }
    }
    logits.noalias() -= weighted.transpose() * quads[f];
    for (std::size_t d = 0; d < D; ++d) {
      logits.col(static_cast<Index>(d)) -= log_det[f * D + d] * mass;
    }
  }
  DoaPosterior ew(K, D);
  std::vector<double> row(D);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t d = 0; d < D; ++d) {
      row[d] = std::log(p.direction_prior[d]) + logits(static_cast<Index>(k), static_cast<Index>(d));
    }
    if (!normalize_log_weights(row.data(), D, floor)) {
      throw Error(ErrorKind::kNumeric, "DoA posterior of source " + std::to_string(k) + " is degenerate");
    }
    for (std::size_t d = 0; d < D; ++d) ew(k, d) = row[d];
  }
  return ew;
}

std::vector<ComplexMatrix> scm_from_packed(const Table& packed, const MaskPosterior& ez,
                                           const DoaPosterior& ew, const std::vector<double>& psd,
                                           const std::vector<ComplexMatrix>& templates,
                                           const Hyperparams& hyper, double psi, std::size_t mics) {
  const std::size_t T = ez.frames, F = ez.bins, K = ez.sources, D = ew.directions;
  const Eigen::MatrixXd ewm = ew_matrix(ew);
  std::vector<ComplexMatrix> scm(F * D);
  Eigen::MatrixXd weighted(static_cast<Index>(T), static_cast<Index>(K));
  for (std::size_t f = 0; f < F; ++f) {
    Eigen::RowVectorXd mass = Eigen::RowVectorXd::Zero(static_cast<Index>(K));
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const double z = ez(t, f, k);
        weighted(static_cast<Index>(t), static_cast<Index>(k)) = z / psd[(t * F + f) * K + k];
        mass(static_cast<Index>(k)) += z;
      }
    }
    const Eigen::MatrixXd c = weighted * ewm;                      // T x D
    const Eigen::MatrixXd sums = c.transpose() * packed[f];         // D x packed
    const Eigen::RowVectorXd counts = mass * ewm;                   // 1 x D
    for (std::size_t d = 0; d < D; ++d) {
      const auto dd = static_cast<Index>(d);
      ComplexMatrix h = psi * templates[f * D + d] + detail::unpack_outer_sum(sums.row(dd), mics);
      h /= hyper.nu + counts(dd) + static_cast<double>(mics);
      scm[f * D + d] = 0.5 * (h + h.adjoint());
    }
  }
  return scm;
}

std::vector<double> psd_from_quads(const Table& quads, const DoaPosterior& ew, std::size_t frames,
                                   std::size_t mics, double floor) {
  const std::size_t F = quads.size(), K = ew.sources;
  const Eigen::MatrixXd ewm = ew_matrix(ew);
  std::vector<double> psd(frames * F * K);
  const double inv_m = 1.0 / static_cast<double>(mics);
  for (std::size_t f = 0; f < F; ++f) {
    const Eigen::MatrixXd qk = quads[f] * ewm.transpose();
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        psd[(t * F + f) * K + k] = std::max(floor, inv_m * qk(static_cast<Index>(t), static_cast<Index>(k)));
      }
    }
  }
  return psd;
}

double kl_masks(const MaskPosterior& ez, const std::vector<double>& activation) {
  double kl = 0.0;
  for (std::size_t t = 0; t < ez.frames; ++t) {
    for (std::size_t f = 0; f < ez.bins; ++f) {
      for (std::size_t k = 0; k < ez.sources; ++k) {
        const double z = ez(t, f, k);
        if (z > 0.0) kl += z * (std::log(z) - std::log(activation[t * ez.sources + k]));
      }
    }
  }
  return kl;
}

double kl_doa(const DoaPosterior& ew, const std::vector<double>& direction_prior) {
  double kl = 0.0;
  for (std::size_t k = 0; k < ew.sources; ++k) {
    for (std::size_t d = 0; d < ew.directions; ++d) {
      const double w = ew(k, d);
      if (w > 0.0) kl += w * (std::log(w) - std::log(direction_prior[d]));
    }
  }
  return kl;
}

double elbo_from_quads(const Table& quads, const std::vector<double>& log_det, const ModelParams& p,
                       const MaskPosterior& ez, const DoaPosterior& ew) {
  const std::size_t T = p.frames, F = p.bins, K = p.sources, D = p.directions;
  const double M = static_cast<double>(p.mics);
  const Eigen::MatrixXd ewm = ew_matrix(ew);
  const Eigen::VectorXd ew_mass = ewm.rowwise().sum();
  double expected = 0.0;
  for (std::size_t f = 0; f < F; ++f) {
    const Eigen::MatrixXd qk = quads[f] * ewm.transpose();
    for (std::size_t k = 0; k < K; ++k) {
      double mean_log_det = 0.0;
      for (std::size_t d = 0; d < D; ++d) mean_log_det += ew(k, d) * log_det[f * D + d];
      const auto kk = static_cast<Index>(k);
      for (std::size_t t = 0; t < T; ++t) {
        const double lam = p.lambda(t, f, k);
        const double ell = -ew_mass(kk) * M * (kLogPi + std::log(lam)) - mean_log_det -
                           qk(static_cast<Index>(t), kk) / lam;
        expected += ez(t, f, k) * ell;
      }
    }
    if (!std::isfinite(expected)) {
      throw Error(ErrorKind::kNumeric, "expected log-likelihood became non-finite at bin f=" + std::to_string(f));
    }
  }
  const double kl_z = kl_masks(ez, p.activation);
  const double kl_w = kl_doa(ew, p.direction_prior);
  if (!std::isfinite(kl_z)) throw Error(ErrorKind::kNumeric, "KL[q(z) || p(z)] is non-finite");
  if (!std::isfinite(kl_w)) throw Error(ErrorKind::kNumeric, "KL[q(w) || p(w)] is non-finite");
  return expected - kl_z - kl_w;
}

double log_prior_from_factors(const ModelParams& p, const Factors& factors,
                              const SteeringTemplate& tpl, PriorScale scale) {
  const double psi = psi_scale(p.hyper, p.mics, scale);
  const double power = p.hyper.nu + static_cast<double>(p.mics);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.scm.size(); ++i) {
    const double trace = (tpl.scms()[i] * factors.inverse[i]).trace().real();
    acc += -power * factors.log_det[i] - psi * trace;
  }
  return acc;
}

PriorPair priors_from(const MaskPosterior& ez, const DoaPosterior& ew) {
  PriorPair out;
  out.activation.assign(ez.frames * ez.sources, 0.0);
  const double inv_f = 1.0 / static_cast<double>(ez.bins);
  for (std::size_t t = 0; t < ez.frames; ++t) {
    for (std::size_t f = 0; f < ez.bins; ++f) {
      for (std::size_t k = 0; k < ez.sources; ++k) out.activation[t * ez.sources + k] += inv_f * ez(t, f, k);
    }
  }
  out.direction_prior.assign(ew.directions, 0.0);
  const double inv_k = 1.0 / static_cast<double>(ew.sources);
  for (std::size_t k = 0; k < ew.sources; ++k) {
    for (std::size_t d = 0; d < ew.directions; ++d) out.direction_prior[d] += inv_k * ew(k, d);
  }
  return out;
}

MaskPosterior masks_from_template_quads(const Table& qt, const DoaPosterior& ew, std::size_t frames,
                                        double floor) {
  const std::size_t F = qt.size(), K = ew.sources;
  const Eigen::MatrixXd ewm = ew_matrix(ew);
  MaskPosterior ez(frames, F, K);
  std::vector<double> logits(K);
  for (std::size_t f = 0; f < F; ++f) {
    const Eigen::MatrixXd qk = qt[f] * ewm.transpose();
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t k = 0; k < K; ++k) logits[k] = -qk(static_cast<Index>(t), static_cast<Index>(k));
      if (!normalize_log_weights(logits.data(), K, floor)) {
        std::fill(logits.begin(), logits.end(), 1.0 / static_cast<double>(K));
      }
      for (std::size_t k = 0; k < K; ++k) ez(t, f, k) = logits[k];
    }
  }
  return ez;
}

DoaPosterior doa_from_template_quads(const Table& qt, const MaskPosterior& ez, std::size_t directions,
                                     double floor) {
  const std::size_t T = ez.frames, K = ez.sources;
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(static_cast<Index>(K), static_cast<Index>(directions));
  Eigen::MatrixXd zf(static_cast<Index>(T), static_cast<Index>(K));
  for (std::size_t f = 0; f < qt.size(); ++f) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) zf(static_cast<Index>(t), static_cast<Index>(k)) = ez(t, f, k);
    }
    logits.noalias() -= zf.transpose() * qt[f];
  }
  DoaPosterior ew(K, directions);
  std::vector<double> row(directions);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t d = 0; d < directions; ++d) row[d] = logits(static_cast<Index>(k), static_cast<Index>(d));
    if (!normalize_log_weights(row.data(), directions, floor)) {
      throw Error(ErrorKind::kNumeric, "initial DoA posterior is degenerate");
    }
    for (std::size_t d = 0; d < directions; ++d) ew(k, d) = row[d];
  }
  return ew;
}

void check_finite(const Spectrogram& x) {
  if (!x.all_finite()) throw Error(ErrorKind::kNumeric, "spectrogram contains non-finite values");
}

}  // namespace

void EmConfig::validate() const {
  if (iterations < 1) throw Error(ErrorKind::kInvalidConfig, "EM needs at least one iteration");
  if (!(lambda_floor > 0.0) || !(posterior_floor > 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "EM floors must be positive");
  }
  if (!(convergence_tol >= 0.0)) throw Error(ErrorKind::kInvalidConfig, "convergence_tol must be >= 0");
}

void ModelParams::validate() const {
  if (scm.size() != bins * directions || psd.size() != frames * bins * sources ||
      activation.size() != frames * sources || direction_prior.size() != directions) {
    throw Error(ErrorKind::kDimension, "model parameter storage does not match its shape");
  }
}

MaskPosterior e_step_masks(const Spectrogram& x, const ModelParams& params, const DoaPosterior& ew,
                           double posterior_floor, EmDiagnostics* diag) {
  check_finite(x);
  check_shapes(x, params);
  params.validate();
  const auto factors = factorize(params.scm, params.directions);
  const auto quads = detail::quad_table(detail::pack_outer_products(x), factors.inverse, params.directions);
  return masks_from_quads(quads, factors.log_det, params, ew, posterior_floor, diag);
}

DoaPosterior e_step_doa(const Spectrogram& x, const ModelParams& params, const MaskPosterior& ez,
                        double posterior_floor) {
  check_finite(x);
  check_shapes(x, params);
  params.validate();
  const auto factors = factorize(params.scm, params.directions);
  const auto quads = detail::quad_table(detail::pack_outer_products(x), factors.inverse, params.directions);
  return doa_from_quads(quads, factors.log_det, params, ez, posterior_floor);
}

std::vector<ComplexMatrix> m_step_scm(const Spectrogram& x, const MaskPosterior& ez,
                                      const DoaPosterior& ew, const std::vector<double>& psd,
                                      const SteeringTemplate& tpl, const Hyperparams& hyper,
                                      PriorScale prior_scale) {
  check_mask(x, ez);
  if (ew.sources != ez.sources || ew.directions != tpl.directions() || tpl.bins() != x.bins) {
    throw Error(ErrorKind::kDimension, "posteriors do not match the steering template");
  }
  return scm_from_packed(detail::pack_outer_products(x), ez, ew, psd, tpl.scms(), hyper,
                         psi_scale(hyper, x.channels, prior_scale), x.channels);
}

std::vector<double> m_step_psd(const Spectrogram& x, const DoaPosterior& ew,
                               const std::vector<ComplexMatrix>& scm, double lambda_floor) {
  if (scm.size() != x.bins * ew.directions) throw Error(ErrorKind::kDimension, "SCM count mismatch");
  const auto factors = factorize(scm, ew.directions);
  const auto quads = detail::quad_table(detail::pack_outer_products(x), factors.inverse, ew.directions);
  return psd_from_quads(quads, ew, x.frames, x.channels, lambda_floor);
}

PriorPair m_step_priors(const MaskPosterior& ez, const DoaPosterior& ew) { return priors_from(ez, ew); }

double elbo(const Spectrogram& x, const ModelParams& params, const MaskPosterior& ez,
            const DoaPosterior& ew) {
  check_finite(x);
  check_shapes(x, params);
  check_mask(x, ez);
  params.validate();
  const auto factors = factorize(params.scm, params.directions);
  const auto quads = detail::quad_table(detail::pack_outer_products(x), factors.inverse, params.directions);
  return elbo_from_quads(quads, factors.log_det, params, ez, ew);
}

double scm_log_prior(const ModelParams& params, const SteeringTemplate& tpl, PriorScale prior_scale) {
  return log_prior_from_factors(params, factorize(params.scm, params.directions), tpl, prior_scale);
}

InitialPosteriors init_directional(const Spectrogram& x, const SteeringTemplate& tpl,
                                   std::size_t sources, double posterior_floor) {
  const std::size_t D = tpl.directions();
  if (sources == 0 || sources > D) {
    throw Error(ErrorKind::kInvalidConfig, "directional init needs 1 <= K <= D, got K=" +
                                               std::to_string(sources) + " D=" + std::to_string(D));
  }
  if (tpl.bins() != x.bins || tpl.mics() != x.channels) {
    throw Error(ErrorKind::kDimension, "spectrogram does not match the steering template");
  }
  check_finite(x);
  const std::size_t block = D / sources;
  DoaPosterior ew(sources, D);
  for (std::size_t k = 0; k < sources; ++k) {
    const std::size_t begin = k * block;
    const std::size_t end = k + 1 == sources ? D : (k + 1) * block;
    for (std::size_t d = begin; d < end; ++d) ew(k, d) = 1.0 / static_cast<double>(end - begin);
  }
  const auto qt = detail::quad_table(detail::pack_outer_products(x), tpl.inverses(), D);
  return {masks_from_template_quads(qt, ew, x.frames, posterior_floor), std::move(ew)};
}

DoaPosterior init_doa_from_masks(const Spectrogram& x, const MaskPosterior& ez,
                                 const SteeringTemplate& tpl, double posterior_floor) {
  check_mask(x, ez);
  if (tpl.bins() != x.bins || tpl.mics() != x.channels) {
    throw Error(ErrorKind::kDimension, "spectrogram does not match the steering template");
  }
  check_finite(x);
  const auto qt = detail::quad_table(detail::pack_outer_products(x), tpl.inverses(), tpl.directions());
  return doa_from_template_quads(qt, ez, tpl.directions(), posterior_floor);
}

SeparationResult run_em(const Spectrogram& x, const SteeringTemplate& tpl, const EmConfig& cfg,
                        const Hyperparams& hyper, const EmInit& init) {
  cfg.validate();
  hyper.validate(x.channels);
  check_finite(x);
  if (tpl.bins() != x.bins || tpl.mics() != x.channels) {
    throw Error(ErrorKind::kDimension, "spectrogram (F=" + std::to_string(x.bins) + ", M=" +
                                           std::to_string(x.channels) +
                                           ") does not match the steering template");
  }
  const double power = mean_power(x);
  if (!(power > 0.0)) throw Error(ErrorKind::kDegenerateInput, "mixture is all zero");
  const double lambda_floor = cfg.lambda_floor * power;
  const std::size_t D = tpl.directions();
  const double psi = psi_scale(hyper, x.channels, cfg.prior_scale);

  const auto packed = detail::pack_outer_products(x);
  const auto template_quads = detail::quad_table(packed, tpl.inverses(), D);

  SeparationResult r;
  if (init.kind == EmInit::Kind::kDirectional) {
    auto start = init_directional(x, tpl, init.sources, cfg.posterior_floor);
    r.ez = std::move(start.ez);
    r.ew = std::move(start.ew);
  } else {
    if (!init.masks) throw Error(ErrorKind::kInvalidConfig, "external-mask init without masks");
    check_mask(x, *init.masks);
    init.masks->validate(1e-6);
    r.ez = *init.masks;
    r.ew = doa_from_template_quads(template_quads, r.ez, D, cfg.posterior_floor);
  }

  ModelParams& p = r.params;
  p.frames = x.frames;
  p.bins = x.bins;
  p.sources = r.ez.sources;
  p.directions = D;
  p.mics = x.channels;
  p.hyper = hyper;

  // Initial M-step: lambda under the template SCMs, then H, lambda, pi, phi.
  p.psd = psd_from_quads(template_quads, r.ew, x.frames, x.channels, lambda_floor);
  p.scm = scm_from_packed(packed, r.ez, r.ew, p.psd, tpl.scms(), hyper, psi, x.channels);
  auto factors = factorize(p.scm, D);
  auto quads = detail::quad_table(packed, factors.inverse, D);
  p.psd = psd_from_quads(quads, r.ew, x.frames, x.channels, lambda_floor);
  {
    auto priors = priors_from(r.ez, r.ew);
    p.activation = std::move(priors.activation);
    p.direction_prior = std::move(priors.direction_prior);
  }

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    try {
      r.ez = masks_from_quads(quads, factors.log_det, p, r.ew, cfg.posterior_floor, &r.diagnostics);
      r.ew = doa_from_quads(quads, factors.log_det, p, r.ez, cfg.posterior_floor);

      p.scm = scm_from_packed(packed, r.ez, r.ew, p.psd, tpl.scms(), hyper, psi, x.channels);
      factors = factorize(p.scm, D);
      quads = detail::quad_table(packed, factors.inverse, D);
      p.psd = psd_from_quads(quads, r.ew, x.frames, x.channels, lambda_floor);
      auto priors = priors_from(r.ez, r.ew);
      p.activation = std::move(priors.activation);
      p.direction_prior = std::move(priors.direction_prior);

      const double bound = elbo_from_quads(quads, factors.log_det, p, r.ez, r.ew);
      const double objective = bound + log_prior_from_factors(p, factors, tpl, cfg.prior_scale);
      if (!r.objective_trace.empty()) {
        const double prev = r.objective_trace.back();
        const double drop = (prev - objective) / std::max(1.0, std::abs(prev));
        if (drop > 1e-6) {
          ++r.diagnostics.monotonicity_violations;
          logger().warn("EM objective decreased at iteration {} (relative drop {:.3e})", it + 1, drop);
        }
        r.diagnostics.worst_relative_drop = std::max(r.diagnostics.worst_relative_drop, drop);
      }
      r.elbo_trace.push_back(bound);
      r.objective_trace.push_back(objective);
      logger().debug("EM iteration {}: elbo {:.6f} objective {:.6f}", it + 1, bound, objective);

      if (cfg.convergence_tol > 0.0 && r.objective_trace.size() >= 2) {
        const double prev = r.objective_trace[r.objective_trace.size() - 2];
        if (std::abs(objective - prev) / std::max(1e-300, std::abs(objective)) < cfg.convergence_tol) break;
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "EM iteration " + std::to_string(it + 1) + ": " + e.what());
    }
  }
  return r;
}

MergedClasses merge_classes(const Spectrogram& x, const MaskPosterior& ez, const DoaPosterior& ew,
                            const DirectionGrid& grid, std::size_t n_sources,
                            std::size_t reference_channel, double min_share) {
  check_mask(x, ez);
  const std::size_t K = ez.sources;
  if (n_sources == 0 || n_sources > K) {
    throw Error(ErrorKind::kInvalidConfig, "cannot merge " + std::to_string(K) + " classes into " +
                                               std::to_string(n_sources) + " sources");
  }
  if (ew.sources != K || ew.directions != grid.size()) {
    throw Error(ErrorKind::kDimension, "DoA posterior does not match the mask posterior/grid");
  }
  if (reference_channel >= x.channels) throw Error(ErrorKind::kDimension, "reference channel out of range");

  std::vector<double> energy(K, 0.0);
  for (std::size_t t = 0; t < x.frames; ++t) {
    for (std::size_t f = 0; f < x.bins; ++f) {
      const double e = std::norm(x(t, f, reference_channel));
      for (std::size_t k = 0; k < K; ++k) energy[k] += ez(t, f, k) * e;
    }
  }
  double total = 0.0;
  for (double e : energy) total += e;
  std::vector<double> doa(K);
  for (std::size_t k = 0; k < K; ++k) doa[k] = grid.azimuth(ew.argmax(k));

  std::vector<std::size_t> by_energy(K);
  for (std::size_t k = 0; k < K; ++k) by_energy[k] = k;
  std::stable_sort(by_energy.begin(), by_energy.end(),
                   [&](std::size_t a, std::size_t b) { return energy[a] > energy[b]; });

  std::vector<bool> significant(K, false);
  std::size_t n_significant = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (total > 0.0 && energy[k] / total >= min_share) {
      significant[k] = true;
      ++n_significant;
    }
  }
  for (std::size_t i = 0; n_significant < n_sources && i < K; ++i) {
    if (!significant[by_energy[i]]) {
      significant[by_energy[i]] = true;
      ++n_significant;
    }
  }

  // Clusters of significant classes, represented by their highest-energy member.
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t k = 0; k < K; ++k) {
    if (significant[k]) clusters.push_back({k});
  }
  auto representative = [&](const std::vector<std::size_t>& c) {
    std::size_t best = c.front();
    for (auto k : c) {
      if (energy[k] > energy[best]) best = k;
    }
    return best;
  };
  while (clusters.size() > n_sources) {
    std::size_t best_a = 0, best_b = 1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        const double dist = circular_distance_deg(doa[representative(clusters[a])], doa[representative(clusters[b])]);
        if (dist < best_dist) {
          best_dist = dist;
          best_a = a;
          best_b = b;
        }
      }
    }
    clusters[best_a].insert(clusters[best_a].end(), clusters[best_b].begin(), clusters[best_b].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best_b));
  }

  MergedClasses out;
  out.class_to_source.assign(K, 0);
  std::vector<std::size_t> reps;
  for (std::size_t s = 0; s < clusters.size(); ++s) {
    reps.push_back(representative(clusters[s]));
    for (auto k : clusters[s]) out.class_to_source[k] = s;
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (significant[k]) continue;
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < reps.size(); ++s) {
      const double dist = circular_distance_deg(doa[k], doa[reps[s]]);
      if (dist < best_dist) {
        best_dist = dist;
        best = s;
      }
    }
    out.class_to_source[k] = best;
  }

  out.ez = MaskPosterior(ez.frames, ez.bins, n_sources);
  for (std::size_t t = 0; t < ez.frames; ++t) {
    for (std::size_t f = 0; f < ez.bins; ++f) {
      for (std::size_t k = 0; k < K; ++k) out.ez(t, f, out.class_to_source[k]) += ez(t, f, k);
    }
  }
  out.ew = DoaPosterior(n_sources, ew.directions);
  for (std::size_t s = 0; s < n_sources; ++s) {
    for (std::size_t d = 0; d < ew.directions; ++d) out.ew(s, d) = ew(reps[s], d);
  }
  return out;
}

}  // namespace cgmm
