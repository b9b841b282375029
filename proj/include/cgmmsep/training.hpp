#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "cgmmsep/network.hpp"
#include "cgmmsep/posterior.hpp"
#include "cgmmsep/signal.hpp"
#include "cgmmsep/spatial.hpp"

namespace cgmm {

// Mean of |x_tf|^2 / M over all (t, f).
double avg_power(const Spectrogram& x);

// Training objective on the power-normalised mixture x / sqrt(lambda_hat):
//   L = (1 / TF) [ sum ez ew (-log|G_fd| - x^H G_fd^{-1} x / lambda_hat)
//                  + sum ez log(pi / ez) + sum ew log(phi / ew) ].
// Relative to the ELBO with lambda = lambda_hat and H = G this drops exactly
// TF * M * (log(pi) + log(lambda_hat)) before the 1 / TF scaling.
struct TrainingElbo {
  double loss = 0.0;                 // -L
  std::vector<double> grad_ez;       // dloss/dez, (t * F + f) * K + k
  Eigen::MatrixXd grad_ew;           // dloss/dew, K x D
  double kl_masks = 0.0;             // sum ez log(ez / pi), >= 0
  double kl_doa = 0.0;               // sum ew log(ew / phi), >= 0
  std::size_t floored = 0;           // posterior entries raised to the floor
};

// scaled_loglik holds log N_c(x_tf / sqrt(lambda_hat); 0, G_fd).
TrainingElbo training_elbo(const TemplateLogLik& scaled_loglik, std::size_t mics, const MaskPosterior& ez,
                           const DoaPosterior& ew, const std::vector<double>& pi,
                           const std::vector<double>& phi, double posterior_floor = 1e-12);

TrainingElbo training_elbo(const Spectrogram& x, const MaskPosterior& ez, const DoaPosterior& ew,
                           const std::vector<double>& pi, const std::vector<double>& phi,
                           const SteeringTemplate& tpl, double lambda_hat, double posterior_floor = 1e-12);

// Everything a training step needs from one mixture; computed once per corpus.
struct TrainingExample {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t mics = 0;
  double lambda_hat = 0.0;
  Eigen::MatrixXd features;      // T x F network input
  TemplateLogLik scaled_loglik;  // per bin, T x D
};

TrainingExample prepare_example(const Spectrogram& x, const SteeringTemplate& tpl, std::size_t feature_channel = 0);

struct PipelineOptions {
  bool omega_stop_gradient = false;
  double posterior_floor = 1e-12;
};

// One pass of g -> omega -> h -> {pi, phi} -> training_elbo, optionally with
// parameter gradients.
struct PipelineResult {
  double loss = 0.0;
  Eigen::VectorXd grad_mask;
  Eigen::VectorXd grad_loc;
  MaskPosterior ez;
  DoaPosterior ew;
  std::size_t floored = 0;
};

PipelineResult evaluate_pipeline(const MaskNetwork& g, const LocalizationMap& h, const TrainingExample& ex,
                                 const PipelineOptions& opts, bool with_gradients);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam step descending grads.
void adam_update(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
                 const AdamConfig& cfg = {});

struct TrainConfig {
  double learning_rate = 1e-3;
  double lr_decay = 0.7;
  std::size_t batch_size = 8;
  std::size_t epochs = 20;
  bool omega_stop_gradient = false;
  std::uint64_t seed = 0;
  double posterior_floor = 1e-12;
  // Initial log scale of the localization map logits.
  double initial_log_temperature = kDefaultLogTemperature;

  void validate() const;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  bool skipped = false;
};

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;       // used during the epoch
  double next_learning_rate = 0.0;  // after the decay rule
  std::vector<StepResult> steps;
};

class Trainer {
 public:
  Trainer(MaskNetwork& g, LocalizationMap& h, TrainConfig cfg);

  // Forward, re-estimate pi and phi, backpropagate, one Adam step on both
  // networks. The batch loss is the mean of the per-mixture losses.
  StepResult train_step(const std::vector<const TrainingExample*>& batch);

  // Shuffles with (seed, epoch), steps through mini-batches and multiplies the
  // learning rate by lr_decay when the epoch loss exceeds the previous one.
  EpochSummary run_epoch(const std::vector<TrainingExample>& corpus);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::size_t epoch() const { return epoch_; }
  void set_epoch(std::size_t e) { epoch_ = e; }
  double last_epoch_loss() const { return last_epoch_loss_; }
  void set_last_epoch_loss(double v) { last_epoch_loss_ = v; }
  AdamState& mask_state() { return adam_g_; }
  AdamState& loc_state() { return adam_h_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  MaskNetwork& g_;
  LocalizationMap& h_;
  TrainConfig cfg_;
  double lr_;
  std::size_t epoch_ = 0;
  double last_epoch_loss_;
  AdamState adam_g_;
  AdamState adam_h_;
};

// Network masks for a mixture (features from the given channel).
MaskPosterior network_masks(const MaskNetwork& g, const Spectrogram& x, std::size_t channel = 0);

struct GradcheckOptions {
  double step = 1e-5;
  double threshold = 1e-4;
};

struct GradcheckReport {
  double max_rel_error_mask = 0.0;
  double max_rel_error_loc = 0.0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

// Compares analytic parameter gradients of the full pipeline with central
// differences, always through omega. Entry error is |a - n| / max(|a|, |n|, s)
// with s = 1e-3 * max|a| over the network's parameters.
GradcheckReport gradcheck(const MaskNetwork& g, const LocalizationMap& h, const TrainingExample& ex,
                          const GradcheckOptions& opts = {});

// A small random mixture (T, F <= 8) on a 4-mic array for gradcheck.
TrainingExample gradcheck_instance(std::size_t frames, std::size_t bins, std::size_t directions,
                                   std::uint64_t seed);

}  // namespace cgmm
