#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cgmmsep/posterior.hpp"
#include "cgmmsep/spatial.hpp"

namespace cgmm {

inline constexpr double kSiSdrCapDb = 60.0;

// Scale-invariant SDR in dB, clamped to [-60, +60].
double si_sdr(std::span<const double> estimate, std::span<const double> reference);

struct Alignment {
  // permutation[k] is the estimate assigned to reference k.
  std::vector<std::size_t> permutation;
  std::vector<double> si_sdr;  // per reference
  double mean = 0.0;
};

// Brute force over all K! assignments; ties keep the lexicographically first.
// Estimates/references of unequal length are compared over the common prefix.
Alignment permutation_align(const std::vector<std::vector<double>>& estimates,
                            const std::vector<std::vector<double>>& references);

// Circular error between argmax_d ew and the matched true azimuth, per true
// source. Without a permutation the assignment minimising the total error is used.
std::vector<double> doa_error(const DoaPosterior& ew, const DirectionGrid& grid,
                              const std::vector<double>& true_azimuths_deg,
                              const std::optional<std::vector<std::size_t>>& permutation = std::nullopt);

}  // namespace cgmm
