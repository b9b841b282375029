#include "cgmmsep/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "cgmmsep/error.hpp"
#include "cgmmsep/log.hpp"

namespace cgmm {

namespace {

using Index = Eigen::Index;

void check_posteriors(const TemplateLogLik& loglik, const MaskPosterior& ez, const DoaPosterior& ew,
                      const std::vector<double>& pi, const std::vector<double>& phi) {
  if (loglik.size() != ez.bins || ez.bins == 0 || static_cast<std::size_t>(loglik[0].rows()) != ez.frames) {
    throw Error(ErrorKind::kDimension, "mask posterior does not match the log-likelihood table");
  }
  const auto D = static_cast<std::size_t>(loglik[0].cols());
  if (ew.sources != ez.sources || ew.directions != D) {
    throw Error(ErrorKind::kDimension, "DoA posterior does not match the mask posterior/table");
  }
  if (pi.size() != ez.frames * ez.sources || phi.size() != D) {
    throw Error(ErrorKind::kDimension, "prior shapes do not match the posteriors");
  }
}

double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace

double avg_power(const Spectrogram& x) {
  if (x.values.empty()) throw Error(ErrorKind::kDimension, "empty spectrogram");
  double acc = 0.0;
  for (const auto& v : x.values) acc += std::norm(v);
  const double p = acc / static_cast<double>(x.values.size());
  if (!(p > 0.0)) throw Error(ErrorKind::kDegenerateInput, "mixture has zero power");
  if (!std::isfinite(p)) throw Error(ErrorKind::kNumeric, "mixture power is non-finite");
  return p;
}

TrainingElbo training_elbo(const TemplateLogLik& scaled_loglik, std::size_t mics, const MaskPosterior& ez,
                           const DoaPosterior& ew, const std::vector<double>& pi,
                           const std::vector<double>& phi, double posterior_floor) {
  check_posteriors(scaled_loglik, ez, ew, pi, phi);
  const std::size_t T = ez.frames, F = ez.bins, K = ez.sources, D = ew.directions;
  const double shift = static_cast<double>(mics) * std::log(std::numbers::pi);
  const double norm = 1.0 / static_cast<double>(T * F);

  TrainingElbo out;
  out.grad_ez.assign(T * F * K, 0.0);
  Eigen::MatrixXd ewm(static_cast<Index>(K), static_cast<Index>(D));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t d = 0; d < D; ++d) ewm(static_cast<Index>(k), static_cast<Index>(d)) = ew(k, d);
  }
  auto floored_log = [&](double v) {
    if (v < posterior_floor) {
      ++out.floored;
      v = posterior_floor;
    }
    return std::log(v);
  };

  double expected = 0.0;
  Eigen::MatrixXd data_ew = Eigen::MatrixXd::Zero(static_cast<Index>(K), static_cast<Index>(D));
  Eigen::MatrixXd zf(static_cast<Index>(T), static_cast<Index>(K));
  for (std::size_t f = 0; f < F; ++f) {
    const Eigen::MatrixXd c = scaled_loglik[f].array() + shift;  // -log|G| - x^H G^-1 x / lambda_hat
    const Eigen::MatrixXd a = c * ewm.transpose();                // T x K
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) zf(static_cast<Index>(t), static_cast<Index>(k)) = ez(t, f, k);
    }
    expected += (zf.array() * a.array()).sum();
    data_ew.noalias() += zf.transpose() * c;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const double log_ez = floored_log(ez(t, f, k));
        const double log_pi = std::log(pi[t * K + k]);
        out.kl_masks += ez(t, f, k) * (log_ez - log_pi);
        out.grad_ez[(t * F + f) * K + k] =
            -norm * (a(static_cast<Index>(t), static_cast<Index>(k)) + log_pi - log_ez - 1.0);
      }
    }
  }
  out.grad_ew.resize(static_cast<Index>(K), static_cast<Index>(D));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t d = 0; d < D; ++d) {
      const double log_ew = floored_log(ew(k, d));
      const double log_phi = std::log(phi[d]);
      out.kl_doa += ew(k, d) * (log_ew - log_phi);
      out.grad_ew(static_cast<Index>(k), static_cast<Index>(d)) =
          -norm * (data_ew(static_cast<Index>(k), static_cast<Index>(d)) + log_phi - log_ew - 1.0);
    }
  }
  const double scale = static_cast<double>(T * F);
  if (out.kl_masks < -1e-9 * scale || out.kl_doa < -1e-9 * scale) {
    throw Error(ErrorKind::kNumeric, "negative KL term; posteriors or priors are not normalised");
  }
  out.loss = -norm * (expected - out.kl_masks - out.kl_doa);
  if (!std::isfinite(out.loss)) throw Error(ErrorKind::kNumeric, "training ELBO is non-finite");
  if (out.floored > 0) logger().debug("training_elbo: {} posterior entries floored", out.floored);
  return out;
}

TrainingElbo training_elbo(const Spectrogram& x, const MaskPosterior& ez, const DoaPosterior& ew,
                           const std::vector<double>& pi, const std::vector<double>& phi,
                           const SteeringTemplate& tpl, double lambda_hat, double posterior_floor) {
  if (!(lambda_hat > 0.0)) throw Error(ErrorKind::kDegenerateInput, "lambda_hat must be positive");
  Spectrogram scaled = x;
  const double s = 1.0 / std::sqrt(lambda_hat);
  for (auto& v : scaled.values) v *= s;
  return training_elbo(template_loglik(scaled, tpl), x.channels, ez, ew, pi, phi, posterior_floor);
}

TrainingExample prepare_example(const Spectrogram& x, const SteeringTemplate& tpl, std::size_t feature_channel) {
  TrainingExample ex;
  ex.frames = x.frames;
  ex.bins = x.bins;
  ex.mics = x.channels;
  ex.lambda_hat = avg_power(x);
  ex.features = log_magnitude_features(x, feature_channel);
  Spectrogram scaled = x;
  const double s = 1.0 / std::sqrt(ex.lambda_hat);
  for (auto& v : scaled.values) v *= s;
  ex.scaled_loglik = template_loglik(scaled, tpl);
  return ex;
}

PipelineResult evaluate_pipeline(const MaskNetwork& g, const LocalizationMap& h, const TrainingExample& ex,
                                 const PipelineOptions& opts, bool with_gradients) {
  ForwardCache g_cache, h_cache;
  PipelineResult r;
  r.ez = g.forward(ex.features, with_gradients ? &g_cache : nullptr);
  if (r.ez.sources != g.sources() || r.ez.bins != ex.bins) {
    throw Error(ErrorKind::kDimension, "network output does not match the example");
  }
  const Eigen::MatrixXd omega = omega_features(ex.scaled_loglik, r.ez);
  const double observations = static_cast<double>(ex.frames * ex.bins);
  r.ew = h.forward(omega, observations, with_gradients ? &h_cache : nullptr);

  // pi_tk = mean_f ez, phi_d = mean_k ew; held fixed while differentiating.
  const std::size_t T = ex.frames, F = ex.bins, K = r.ez.sources, D = r.ew.directions;
  std::vector<double> pi(T * K, 0.0), phi(D, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t k = 0; k < K; ++k) pi[t * K + k] += r.ez(t, f, k) / static_cast<double>(F);
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t d = 0; d < D; ++d) phi[d] += r.ew(k, d) / static_cast<double>(K);
  }
  auto value = training_elbo(ex.scaled_loglik, ex.mics, r.ez, r.ew, pi, phi, opts.posterior_floor);
  r.loss = value.loss;
  r.floored = value.floored;
  if (!with_gradients) return r;

  auto h_grads = h.backward(h_cache, value.grad_ew);
  r.grad_loc = std::move(h_grads.parameters);
  if (!opts.omega_stop_gradient) {
    // omega_kd = sum_tf ez_tfk loglik_tfd
    const Eigen::MatrixXd& d_omega = h_grads.omega;
    for (std::size_t f = 0; f < F; ++f) {
      const Eigen::MatrixXd back = ex.scaled_loglik[f] * d_omega.transpose();  // T x K
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t k = 0; k < K; ++k) {
          value.grad_ez[(t * F + f) * K + k] += back(static_cast<Index>(t), static_cast<Index>(k));
        }
      }
    }
  }
  r.grad_mask = g.backward(g_cache, value.grad_ez);
  return r;
}

void adam_update(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
                 const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw Error(ErrorKind::kDimension, "gradient size does not match parameters");
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.epsilon);
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw Error(ErrorKind::kInvalidConfig, "learning rate must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error(ErrorKind::kInvalidConfig, "lr_decay must lie in (0, 1]");
  if (batch_size == 0) throw Error(ErrorKind::kInvalidConfig, "batch size must be positive");
  if (!(posterior_floor > 0.0 && posterior_floor < 1.0)) {
    throw Error(ErrorKind::kInvalidConfig, "posterior_floor must lie in (0, 1)");
  }
}

Trainer::Trainer(MaskNetwork& g, LocalizationMap& h, TrainConfig cfg)
    : g_(g), h_(h), cfg_(cfg), lr_(cfg.learning_rate), last_epoch_loss_(std::numeric_limits<double>::infinity()) {
  cfg_.validate();
}

StepResult Trainer::train_step(const std::vector<const TrainingExample*>& batch) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidConfig, "empty training batch");
  const PipelineOptions opts{cfg_.omega_stop_gradient, cfg_.posterior_floor};
  Eigen::VectorXd grad_g = Eigen::VectorXd::Zero(g_.parameters().size());
  Eigen::VectorXd grad_h = Eigen::VectorXd::Zero(h_.parameters().size());
  StepResult step;
  std::string failure;
  try {
    for (const auto* ex : batch) {
      const auto r = evaluate_pipeline(g_, h_, *ex, opts, true);
      step.loss += r.loss;
      grad_g += r.grad_mask;
      grad_h += r.grad_loc;
    }
  } catch (const Error& e) {
    // Non-finite intermediates mean the gradient is unusable for this batch.
    if (e.kind() != ErrorKind::kNumeric) throw;
    failure = e.what();
    step.loss = std::numeric_limits<double>::quiet_NaN();
  }
  const double n = static_cast<double>(batch.size());
  step.loss /= n;
  grad_g /= n;
  grad_h /= n;
  step.grad_norm = failure.empty() ? std::sqrt(grad_g.squaredNorm() + grad_h.squaredNorm())
                                   : std::numeric_limits<double>::quiet_NaN();
  if (!std::isfinite(step.grad_norm)) {
    step.skipped = true;
    lr_ *= cfg_.lr_decay;
    logger().warn("non-finite gradient{}{}; step skipped, learning rate reduced to {}", failure.empty() ? "" : ": ",
                  failure, lr_);
    return step;
  }
  if (lr_ > 0.0) {
    adam_update(g_.parameters(), grad_g, adam_g_, lr_);
    adam_update(h_.parameters(), grad_h, adam_h_, lr_);
  }
  return step;
}

EpochSummary Trainer::run_epoch(const std::vector<TrainingExample>& corpus) {
  if (corpus.empty()) throw Error(ErrorKind::kInvalidConfig, "empty training corpus");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg_.seed * 1000003ULL + epoch_);
  std::shuffle(order.begin(), order.end(), rng);

  EpochSummary summary;
  summary.epoch = epoch_;
  summary.learning_rate = lr_;
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
    std::vector<const TrainingExample*> batch;
    for (std::size_t i = begin; i < std::min(order.size(), begin + cfg_.batch_size); ++i) {
      batch.push_back(&corpus[order[i]]);
    }
    auto step = train_step(batch);
    if (!step.skipped) {
      total += step.loss * static_cast<double>(batch.size());
      counted += batch.size();
    }
    summary.steps.push_back(step);
  }
  summary.mean_loss = counted > 0 ? total / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
  if (counted > 0 && summary.mean_loss > last_epoch_loss_) lr_ *= cfg_.lr_decay;
  if (counted > 0) last_epoch_loss_ = summary.mean_loss;
  summary.next_learning_rate = lr_;
  ++epoch_;
  logger().info("epoch {}: loss {:.6f}, lr {}", summary.epoch, summary.mean_loss, summary.learning_rate);
  return summary;
}

MaskPosterior network_masks(const MaskNetwork& g, const Spectrogram& x, std::size_t channel) {
  if (x.bins != g.bins()) {
    throw Error(ErrorKind::kCheckpoint, "network expects " + std::to_string(g.bins()) + " bins, mixture has " +
                                            std::to_string(x.bins));
  }
  return g.forward(log_magnitude_features(x, channel));
}

GradcheckReport gradcheck(const MaskNetwork& g, const LocalizationMap& h, const TrainingExample& ex,
                          const GradcheckOptions& opts) {
  const PipelineOptions pipe{false, 1e-300};
  const auto analytic = evaluate_pipeline(g, h, ex, pipe, true);
  auto gp = g.clone();
  auto hp = h.clone();
  GradcheckReport report;
  auto probe = [&](Eigen::VectorXd& params, const Eigen::VectorXd& grads, double& worst) {
    // Central differences lose ~eps * |loss| / step absolutely, so entries far
    // below the largest gradient are compared against a floor.
    const double floor = std::max(1e-3 * (grads.size() > 0 ? grads.cwiseAbs().maxCoeff() : 0.0), 1e-12);
    for (Index i = 0; i < params.size(); ++i) {
      const double saved = params(i);
      params(i) = saved + opts.step;
      const double up = evaluate_pipeline(*gp, *hp, ex, pipe, false).loss;
      params(i) = saved - opts.step;
      const double down = evaluate_pipeline(*gp, *hp, ex, pipe, false).loss;
      params(i) = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      worst = std::max(worst, relative_error(grads(i), numeric, floor));
      ++report.checked;
    }
  };
  probe(gp->parameters(), analytic.grad_mask, report.max_rel_error_mask);
  probe(hp->parameters(), analytic.grad_loc, report.max_rel_error_loc);
  report.max_rel_error = std::max(report.max_rel_error_mask, report.max_rel_error_loc);
  report.passed = report.max_rel_error <= opts.threshold;
  return report;
}

TrainingExample gradcheck_instance(std::size_t frames, std::size_t bins, std::size_t directions,
                                   std::uint64_t seed) {
  if (frames == 0 || bins < 2 || directions == 0) {
    throw Error(ErrorKind::kInvalidConfig, "gradcheck instance needs frames > 0, bins >= 2, directions > 0");
  }
  const auto geom = ArrayGeometry::uniform_circular(4, 0.08);
  const DirectionGrid grid{0.0, 360.0 / static_cast<double>(directions), directions};
  const auto tpl = build_templates(geom, grid, bins, 8000, 1e-2);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> az(0.0, 360.0);
  const double az0 = az(rng), az1 = az(rng);
  const int window = static_cast<int>(2 * (bins - 1));
  Spectrogram x(frames, bins, 4, window / 4, window, 8000);
  for (std::size_t f = 0; f < bins; ++f) {
    const double f_hz = static_cast<double>(f) * 8000.0 / window;
    const auto h0 = steering_vector(geom, az0, f_hz);
    const auto h1 = steering_vector(geom, az1, f_hz);
    for (std::size_t t = 0; t < frames; ++t) {
      const Complex s0(gauss(rng), gauss(rng)), s1(gauss(rng), gauss(rng));
      for (std::size_t m = 0; m < 4; ++m) {
        const auto mi = static_cast<Index>(m);
        x(t, f, m) = s0 * h0(mi) + s1 * h1(mi) + 0.1 * Complex(gauss(rng), gauss(rng));
      }
    }
  }
  return prepare_example(x, tpl);
}

}  // namespace cgmm
