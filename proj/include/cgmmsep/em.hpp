#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "cgmmsep/posterior.hpp"
#include "cgmmsep/signal.hpp"
#include "cgmmsep/spatial.hpp"

namespace cgmm {

// Scale matrix of the inverse-Wishart prior that enters the SCM update:
// kTemplate uses G_fd (the update as usually printed), kScaledTemplate uses
// (nu - M) G_fd, matching the prior's stated scale.
enum class PriorScale { kTemplate, kScaledTemplate };

struct EmConfig {
  std::size_t iterations = 50;
  // Relative to the mean mixture power.
  double lambda_floor = 1e-8;
  double posterior_floor = 1e-12;
  // Optional early stop on |dL| / |L|; 0 disables it.
  double convergence_tol = 0.0;
  PriorScale prior_scale = PriorScale::kTemplate;

  void validate() const;
};

// Theta = {H, lambda, pi, phi} plus the prior hyperparameters.
struct ModelParams {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t sources = 0;
  std::size_t directions = 0;
  std::size_t mics = 0;
  std::vector<ComplexMatrix> scm;        // H_fd at f * D + d
  std::vector<double> psd;               // lambda_tfk at (t * F + f) * K + k
  std::vector<double> activation;        // pi_tk at t * K + k
  std::vector<double> direction_prior;   // phi_d
  Hyperparams hyper;

  double& lambda(std::size_t t, std::size_t f, std::size_t k) { return psd[(t * bins + f) * sources + k]; }
  double lambda(std::size_t t, std::size_t f, std::size_t k) const { return psd[(t * bins + f) * sources + k]; }
  double& pi(std::size_t t, std::size_t k) { return activation[t * sources + k]; }
  double pi(std::size_t t, std::size_t k) const { return activation[t * sources + k]; }

  void validate() const;
};

struct PriorPair {
  std::vector<double> activation;       // pi, (t, k)
  std::vector<double> direction_prior;  // phi, (d)
};

struct EmDiagnostics {
  // Bins where every component log-likelihood was -inf and the prior was used.
  std::size_t prior_fallback_bins = 0;
  // Iterations whose objective dropped by more than 1e-6 relative.
  std::size_t monotonicity_violations = 0;
  double worst_relative_drop = 0.0;
};

MaskPosterior e_step_masks(const Spectrogram& x, const ModelParams& params, const DoaPosterior& ew,
                           double posterior_floor = 1e-12, EmDiagnostics* diag = nullptr);

DoaPosterior e_step_doa(const Spectrogram& x, const ModelParams& params, const MaskPosterior& ez,
                        double posterior_floor = 1e-12);

std::vector<ComplexMatrix> m_step_scm(const Spectrogram& x, const MaskPosterior& ez,
                                      const DoaPosterior& ew, const std::vector<double>& psd,
                                      const SteeringTemplate& tpl, const Hyperparams& hyper,
                                      PriorScale prior_scale = PriorScale::kTemplate);

// lambda_floor here is absolute.
std::vector<double> m_step_psd(const Spectrogram& x, const DoaPosterior& ew,
                               const std::vector<ComplexMatrix>& scm, double lambda_floor);

PriorPair m_step_priors(const MaskPosterior& ez, const DoaPosterior& ew);

// E_q[log p(x | lambda, H, z, w)] - KL[q(z) || p(z | pi)] - KL[q(w) || p(w | phi)].
double elbo(const Spectrogram& x, const ModelParams& params, const MaskPosterior& ez,
            const DoaPosterior& ew);

// Unnormalised log inverse-Wishart prior of the SCMs, sum_fd
// -(nu + M) log|H_fd| - tr(Psi_fd H_fd^{-1}). Adding it to the ELBO gives the
// MAP objective that the EM iterations increase monotonically.
double scm_log_prior(const ModelParams& params, const SteeringTemplate& tpl, PriorScale prior_scale);

struct InitialPosteriors {
  MaskPosterior ez;
  DoaPosterior ew;
};

// Splits the grid into K contiguous blocks (the last absorbs any remainder),
// sets ew uniform on block k and ez_tfk ~ exp(-sum_d ew_kd x^H G_fd^{-1} x).
InitialPosteriors init_directional(const Spectrogram& x, const SteeringTemplate& tpl,
                                   std::size_t sources, double posterior_floor = 1e-12);

// ew_kd ~ exp(-sum_tf ez_tfk x^H G_fd^{-1} x), normalised over d.
DoaPosterior init_doa_from_masks(const Spectrogram& x, const MaskPosterior& ez,
                                 const SteeringTemplate& tpl, double posterior_floor = 1e-12);

struct EmInit {
  enum class Kind { kDirectional, kExternalMasks };
  Kind kind = Kind::kDirectional;
  std::size_t sources = 2;
  std::optional<MaskPosterior> masks;

  static EmInit directional(std::size_t sources) { return {Kind::kDirectional, sources, std::nullopt}; }
  static EmInit external_masks(MaskPosterior ez) {
    const std::size_t k = ez.sources;
    return {Kind::kExternalMasks, k, std::move(ez)};
  }
};

struct SeparationResult {
  MaskPosterior ez;
  DoaPosterior ew;
  ModelParams params;
  // ELBO after each full iteration.
  std::vector<double> elbo_trace;
  // ELBO plus the SCM log prior after each iteration; the quantity EM ascends.
  std::vector<double> objective_trace;
  EmDiagnostics diagnostics;
};

SeparationResult run_em(const Spectrogram& x, const SteeringTemplate& tpl, const EmConfig& cfg,
                        const Hyperparams& hyper, const EmInit& init);

// Reduces K mixture classes to n_sources outputs. Classes holding less than
// min_share of the reference-channel energy are folded into the surviving class
// with the nearest DoA; survivors are merged pairwise by DoA proximity until
// n_sources remain. Each output keeps the DoA posterior of its dominant class.
struct MergedClasses {
  MaskPosterior ez;
  DoaPosterior ew;
  std::vector<std::size_t> class_to_source;
};

MergedClasses merge_classes(const Spectrogram& x, const MaskPosterior& ez, const DoaPosterior& ew,
                            const DirectionGrid& grid, std::size_t n_sources,
                            std::size_t reference_channel = 0, double min_share = 0.05);

}  // namespace cgmm
