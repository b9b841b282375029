#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cgmmsep/posterior.hpp"
#include "cgmmsep/signal.hpp"

namespace cgmm {

// Log-magnitude of one channel as a T x F matrix, shifted by its mean.
Eigen::MatrixXd log_magnitude_features(const Spectrogram& x, std::size_t channel = 0);

// Intermediate values a network keeps from forward for its backward pass.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> tensors;
};

// g: log-magnitude features (T x F) -> q(z) with a softmax over sources.
class MaskNetwork {
 public:
  virtual ~MaskNetwork() = default;

  virtual std::string topology() const = 0;
  virtual std::size_t bins() const = 0;
  virtual std::size_t sources() const = 0;

  virtual Eigen::VectorXd& parameters() = 0;
  virtual const Eigen::VectorXd& parameters() const = 0;

  virtual MaskPosterior forward(const Eigen::MatrixXd& features, ForwardCache* cache = nullptr) const = 0;
  // grad_ez is dLoss/dez at (t * F + f) * K + k; returns dLoss/dparameters.
  virtual Eigen::VectorXd backward(const ForwardCache& cache, const std::vector<double>& grad_ez) const = 0;

  virtual std::unique_ptr<MaskNetwork> clone() const = 0;
};

// h: omega (K x D) -> q(w) with a softmax over directions.
class LocalizationMap {
 public:
  virtual ~LocalizationMap() = default;

  virtual std::string topology() const = 0;
  virtual std::size_t directions() const = 0;

  virtual Eigen::VectorXd& parameters() = 0;
  virtual const Eigen::VectorXd& parameters() const = 0;

  // observations = T * F, the number of TF bins omega was summed over.
  virtual DoaPosterior forward(const Eigen::MatrixXd& omega, double observations,
                               ForwardCache* cache = nullptr) const = 0;
  struct Gradients {
    Eigen::VectorXd parameters;
    Eigen::MatrixXd omega;  // K x D
  };
  virtual Gradients backward(const ForwardCache& cache, const Eigen::MatrixXd& grad_ew) const = 0;

  virtual std::unique_ptr<LocalizationMap> clone() const = 0;
};

// Two affine layers with a tanh between them. Each frame sees its +/- context
// neighbours (zero-padded at the edges); the output is F * K logits with a
// softmax over k.
class ReferenceMaskNet final : public MaskNetwork {
 public:
  ReferenceMaskNet(std::size_t bins, std::size_t sources, std::size_t context = 2, std::size_t hidden = 128,
                   std::uint64_t seed = 0);

  std::string topology() const override;
  std::size_t bins() const override { return bins_; }
  std::size_t sources() const override { return sources_; }
  std::size_t context() const { return context_; }
  std::size_t hidden() const { return hidden_; }
  Eigen::VectorXd& parameters() override { return params_; }
  const Eigen::VectorXd& parameters() const override { return params_; }

  MaskPosterior forward(const Eigen::MatrixXd& features, ForwardCache* cache = nullptr) const override;
  Eigen::VectorXd backward(const ForwardCache& cache, const std::vector<double>& grad_ez) const override;
  std::unique_ptr<MaskNetwork> clone() const override { return std::make_unique<ReferenceMaskNet>(*this); }

 private:
  std::size_t bins_;
  std::size_t sources_;
  std::size_t context_;
  std::size_t hidden_;
  Eigen::VectorXd params_;
};

// Per-bin affine map of the feature: logit_tfk = a_fk * feature_tf + b_fk.
class LinearMaskNet final : public MaskNetwork {
 public:
  LinearMaskNet(std::size_t bins, std::size_t sources, std::uint64_t seed = 0);

  std::string topology() const override;
  std::size_t bins() const override { return bins_; }
  std::size_t sources() const override { return sources_; }
  Eigen::VectorXd& parameters() override { return params_; }
  const Eigen::VectorXd& parameters() const override { return params_; }

  MaskPosterior forward(const Eigen::MatrixXd& features, ForwardCache* cache = nullptr) const override;
  Eigen::VectorXd backward(const ForwardCache& cache, const std::vector<double>& grad_ez) const override;
  std::unique_ptr<MaskNetwork> clone() const override { return std::make_unique<LinearMaskNet>(*this); }

 private:
  std::size_t bins_;
  std::size_t sources_;
  Eigen::VectorXd params_;
};

// omega / TF spans O(100) across directions; s = exp(-3.5) keeps the initial
// softmax unsaturated.
inline constexpr double kDefaultLogTemperature = -3.5;

// ew_kd = softmax_d(s * (a_d * omega_kd / (T F) + b_d)), s = exp(theta).
// Starts at a = 1, b = 0, theta = initial_log_temperature.
class AffineLocalizationMap final : public LocalizationMap {
 public:
  explicit AffineLocalizationMap(std::size_t directions, double initial_log_temperature = kDefaultLogTemperature);

  std::string topology() const override;
  std::size_t directions() const override { return directions_; }
  Eigen::VectorXd& parameters() override { return params_; }
  const Eigen::VectorXd& parameters() const override { return params_; }

  DoaPosterior forward(const Eigen::MatrixXd& omega, double observations,
                       ForwardCache* cache = nullptr) const override;
  Gradients backward(const ForwardCache& cache, const Eigen::MatrixXd& grad_ew) const override;
  std::unique_ptr<LocalizationMap> clone() const override {
    return std::make_unique<AffineLocalizationMap>(*this);
  }

 private:
  std::size_t directions_;
  Eigen::VectorXd params_;  // a (D), b (D), theta
};

// Rebuilds a network from its topology string with freshly initialised weights.
std::unique_ptr<MaskNetwork> make_mask_network(const std::string& topology, std::uint64_t seed = 0);
std::unique_ptr<LocalizationMap> make_localization_map(const std::string& topology);

}  // namespace cgmm
