#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "cgmmsep/posterior.hpp"

namespace cgmm {

using Complex = std::complex<double>;

// Multichannel audio, channel-major storage.
struct Waveform {
  std::size_t channels = 0;
  std::size_t length = 0;
  int sample_rate = 0;
  std::vector<double> samples;

  Waveform() = default;
  Waveform(std::size_t channels, std::size_t length, int sample_rate);

  double& operator()(std::size_t c, std::size_t n) { return samples[c * length + n]; }
  double operator()(std::size_t c, std::size_t n) const { return samples[c * length + n]; }

  std::span<double> channel(std::size_t c) { return {samples.data() + c * length, length}; }
  std::span<const double> channel(std::size_t c) const {
    return {samples.data() + c * length, length};
  }

  void validate() const;
};

enum class WindowType { kHann, kRectangular };

struct StftConfig {
  int window_len = 512;
  int hop = 128;
  WindowType window = WindowType::kHann;

  std::size_t bins() const { return static_cast<std::size_t>(window_len / 2 + 1); }
  void validate() const;
};

// Complex observation x_tf, indexed (t, f, m) with m fastest.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t channels = 0;
  int frame_hop = 0;
  int window_len = 0;
  int sample_rate = 0;
  std::vector<Complex> values;

  Spectrogram() = default;
  Spectrogram(std::size_t frames, std::size_t bins, std::size_t channels, int frame_hop,
              int window_len, int sample_rate);

  Complex& operator()(std::size_t t, std::size_t f, std::size_t m) {
    return values[(t * bins + f) * channels + m];
  }
  Complex operator()(std::size_t t, std::size_t f, std::size_t m) const {
    return values[(t * bins + f) * channels + m];
  }
  // The M-vector observed at (t, f).
  std::span<const Complex> bin(std::size_t t, std::size_t f) const {
    return {values.data() + (t * bins + f) * channels, channels};
  }

  bool all_finite() const;
};

std::vector<double> make_window(WindowType type, int length);

Spectrogram stft(const Waveform& w, const StftConfig& cfg);

// Weighted overlap-add with per-sample window-energy normalisation (floored at
// 10% of its peak near the edges). length = 0
// yields the natural length (T - 1) * hop + window_len.
Waveform istft(const Spectrogram& s, const StftConfig& cfg, std::size_t length = 0);

// output_k[t, f] = z[t, f, k] * x[t, f, reference_channel]
std::vector<Spectrogram> apply_masks(const Spectrogram& x, const MaskPosterior& z,
                                     std::size_t reference_channel = 0);

Spectrogram select_channel(const Spectrogram& x, std::size_t channel);

// Mean of |x_tf|^2 / M over all bins.
double mean_power(const Spectrogram& x);

}  // namespace cgmm
