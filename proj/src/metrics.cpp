#include "cgmmsep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cgmmsep/error.hpp"

namespace cgmm {

double si_sdr(std::span<const double> estimate, std::span<const double> reference) {
  const std::size_t n = std::min(estimate.size(), reference.size());
  double ref_energy = 0.0;
  double cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ref_energy += reference[i] * reference[i];
    cross += estimate[i] * reference[i];
  }
  if (!(ref_energy > 0.0)) throw Error(ErrorKind::kInvalidReference, "reference signal has zero energy");
  const double alpha = cross / ref_energy;
  double target = 0.0;
  double residual = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = alpha * reference[i];
    const double e = estimate[i] - s;
    target += s * s;
    residual += e * e;
  }
  if (target <= 0.0) return -kSiSdrCapDb;
  if (residual <= 0.0) return kSiSdrCapDb;
  return std::clamp(10.0 * std::log10(target / residual), -kSiSdrCapDb, kSiSdrCapDb);
}

Alignment permutation_align(const std::vector<std::vector<double>>& estimates,
                            const std::vector<std::vector<double>>& references) {
  const std::size_t K = references.size();
  if (K == 0 || estimates.size() != K) {
    throw Error(ErrorKind::kDimension, "permutation_align needs as many estimates as references");
  }
  // score(r, e)
  std::vector<double> score(K * K);
  for (std::size_t r = 0; r < K; ++r) {
    for (std::size_t e = 0; e < K; ++e) score[r * K + e] = si_sdr(estimates[e], references[r]);
  }
  std::vector<std::size_t> perm(K);
  std::iota(perm.begin(), perm.end(), 0);
  Alignment best;
  best.mean = -std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < K; ++r) total += score[r * K + perm[r]];
    const double mean = total / static_cast<double>(K);
    if (mean > best.mean) {
      best.mean = mean;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  best.si_sdr.resize(K);
  for (std::size_t r = 0; r < K; ++r) best.si_sdr[r] = score[r * K + best.permutation[r]];
  return best;
}

std::vector<double> doa_error(const DoaPosterior& ew, const DirectionGrid& grid,
                              const std::vector<double>& true_azimuths_deg,
                              const std::optional<std::vector<std::size_t>>& permutation) {
  const std::size_t n = true_azimuths_deg.size();
  if (ew.directions != grid.count) throw Error(ErrorKind::kDimension, "DoA posterior does not match the grid");
  if (n > ew.sources) throw Error(ErrorKind::kDimension, "more true sources than estimated classes");
  std::vector<double> estimated(ew.sources);
  for (std::size_t k = 0; k < ew.sources; ++k) estimated[k] = grid.azimuth(ew.argmax(k));

  std::vector<double> err(n);
  if (permutation) {
    if (permutation->size() != n) throw Error(ErrorKind::kDimension, "permutation size mismatch");
    for (std::size_t r = 0; r < n; ++r) {
      if ((*permutation)[r] >= ew.sources) throw Error(ErrorKind::kDimension, "permutation index out of range");
      err[r] = circular_distance_deg(estimated[(*permutation)[r]], true_azimuths_deg[r]);
    }
    return err;
  }
  // Injective assignment of classes to true sources minimising total error.
  std::vector<std::size_t> classes(ew.sources);
  std::iota(classes.begin(), classes.end(), 0);
  double best_total = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) total += circular_distance_deg(estimated[classes[r]], true_azimuths_deg[r]);
    if (total < best_total - 1e-12) {
      best_total = total;
      for (std::size_t r = 0; r < n; ++r) err[r] = circular_distance_deg(estimated[classes[r]], true_azimuths_deg[r]);
    }
  } while (std::next_permutation(classes.begin(), classes.end()));
  return err;
}

}  // namespace cgmm
