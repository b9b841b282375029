#include "cgmmsep/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cgmmsep/error.hpp"

namespace cgmm {

namespace {

void check_simplex(const double* p, std::size_t n, double tolerance, const std::string& where) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(p[i] >= -tolerance && p[i] <= 1.0 + tolerance)) {
      throw Error(ErrorKind::kNumeric, where + ": entry " + std::to_string(p[i]) + " outside [0, 1]");
    }
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > tolerance) {
    throw Error(ErrorKind::kNumeric, where + ": sums to " + std::to_string(sum));
  }
}

}  // namespace

MaskPosterior::MaskPosterior(std::size_t frames, std::size_t bins, std::size_t sources, double fill)
    : frames(frames), bins(bins), sources(sources), values(frames * bins * sources, fill) {}

MaskPosterior MaskPosterior::uniform(std::size_t frames, std::size_t bins, std::size_t sources) {
  return MaskPosterior(frames, bins, sources, 1.0 / static_cast<double>(sources));
}

void MaskPosterior::validate(double tolerance) const {
  if (values.size() != frames * bins * sources || sources == 0) {
    throw Error(ErrorKind::kDimension, "mask posterior storage does not match its shape");
  }
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t f = 0; f < bins; ++f) {
      check_simplex(&values[(t * bins + f) * sources], sources, tolerance,
                    "mask posterior at (t=" + std::to_string(t) + ", f=" + std::to_string(f) + ")");
    }
  }
}

DoaPosterior::DoaPosterior(std::size_t sources, std::size_t directions, double fill)
    : sources(sources), directions(directions), values(sources * directions, fill) {}

std::size_t DoaPosterior::argmax(std::size_t k) const {
  const auto row = values.begin() + static_cast<std::ptrdiff_t>(k * directions);
  return static_cast<std::size_t>(
      std::max_element(row, row + static_cast<std::ptrdiff_t>(directions)) - row);
}

void DoaPosterior::validate(double tolerance) const {
  if (values.size() != sources * directions || directions == 0) {
    throw Error(ErrorKind::kDimension, "DoA posterior storage does not match its shape");
  }
  for (std::size_t k = 0; k < sources; ++k) {
    check_simplex(&values[k * directions], directions, tolerance,
                  "DoA posterior for source " + std::to_string(k));
  }
}

}  // namespace cgmm
