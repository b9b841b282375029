#pragma once

#include <cstddef>
#include <vector>

namespace cgmm {

// q(z): soft TF masks indexed (t, f, k); each (t, f) fibre sums to one.
struct MaskPosterior {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t sources = 0;
  std::vector<double> values;

  MaskPosterior() = default;
  MaskPosterior(std::size_t frames, std::size_t bins, std::size_t sources, double fill = 0.0);

  static MaskPosterior uniform(std::size_t frames, std::size_t bins, std::size_t sources);

  double& operator()(std::size_t t, std::size_t f, std::size_t k) {
    return values[(t * bins + f) * sources + k];
  }
  double operator()(std::size_t t, std::size_t f, std::size_t k) const {
    return values[(t * bins + f) * sources + k];
  }

  // Throws kNumeric when an entry leaves [0, 1] or a fibre does not sum to 1.
  void validate(double tolerance = 1e-9) const;
};

// q(w): per-source categorical over the direction grid, indexed (k, d).
struct DoaPosterior {
  std::size_t sources = 0;
  std::size_t directions = 0;
  std::vector<double> values;

  DoaPosterior() = default;
  DoaPosterior(std::size_t sources, std::size_t directions, double fill = 0.0);

  double& operator()(std::size_t k, std::size_t d) { return values[k * directions + d]; }
  double operator()(std::size_t k, std::size_t d) const { return values[k * directions + d]; }

  std::size_t argmax(std::size_t k) const;
  void validate(double tolerance = 1e-9) const;
};

}  // namespace cgmm
