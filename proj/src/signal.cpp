#include "cgmmsep/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cgmmsep/error.hpp"
#include "fft.hpp"

namespace cgmm {

Waveform::Waveform(std::size_t channels, std::size_t length, int sample_rate)
    : channels(channels), length(length), sample_rate(sample_rate), samples(channels * length, 0.0) {}

void Waveform::validate() const {
  if (sample_rate <= 0) throw Error(ErrorKind::kInvalidConfig, "sample rate must be positive");
  if (channels == 0) throw Error(ErrorKind::kDimension, "waveform has no channels");
  if (samples.size() != channels * length) {
    throw Error(ErrorKind::kDimension, "waveform channels differ in length");
  }
}

void StftConfig::validate() const {
  if (window_len <= 0 || window_len % 2 != 0) {
    throw Error(ErrorKind::kInvalidConfig, "window_len must be a positive even number");
  }
  if (hop <= 0 || hop > window_len) {
    throw Error(ErrorKind::kInvalidConfig, "hop must satisfy 0 < hop <= window_len");
  }
}

Spectrogram::Spectrogram(std::size_t frames, std::size_t bins, std::size_t channels, int frame_hop,
                         int window_len, int sample_rate)
    : frames(frames),
      bins(bins),
      channels(channels),
      frame_hop(frame_hop),
      window_len(window_len),
      sample_rate(sample_rate),
      values(frames * bins * channels) {}

bool Spectrogram::all_finite() const {
  for (const auto& v : values) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  }
  return true;
}

std::vector<double> make_window(WindowType type, int length) {
  std::vector<double> w(static_cast<std::size_t>(length), 1.0);
  if (type == WindowType::kHann) {
    // periodic Hann: COLA at hop = length / 4
    for (int n = 0; n < length; ++n) {
      w[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
    }
  }
  return w;
}

Spectrogram stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  w.validate();
  const auto n = static_cast<std::size_t>(cfg.window_len);
  if (w.length < n) {
    throw Error(ErrorKind::kInputTooShort, "waveform of " + std::to_string(w.length) +
                                               " samples is shorter than one window (" +
                                               std::to_string(n) + ")");
  }
  const auto hop = static_cast<std::size_t>(cfg.hop);
  const std::size_t frames = 1 + (w.length - n) / hop;
  const std::size_t bins = cfg.bins();
  Spectrogram s(frames, bins, w.channels, cfg.hop, cfg.window_len, w.sample_rate);

  const auto window = make_window(cfg.window, cfg.window_len);
  const auto fft = detail::real_fft(cfg.window_len);
  std::vector<double> frame(n);
  std::vector<Complex> spectrum(bins);
  for (std::size_t m = 0; m < w.channels; ++m) {
    const auto x = w.channel(m);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t i = 0; i < n; ++i) frame[i] = x[t * hop + i] * window[i];
      fft->forward(frame.data(), spectrum.data());
      for (std::size_t f = 0; f < bins; ++f) s(t, f, m) = spectrum[f];
    }
  }
  return s;
}

Waveform istft(const Spectrogram& s, const StftConfig& cfg, std::size_t length) {
  cfg.validate();
  if (s.window_len != cfg.window_len || s.frame_hop != cfg.hop || s.bins != cfg.bins()) {
    throw Error(ErrorKind::kConfigMismatch,
                "spectrogram was produced with window_len=" + std::to_string(s.window_len) +
                    " hop=" + std::to_string(s.frame_hop) + ", istft called with window_len=" +
                    std::to_string(cfg.window_len) + " hop=" + std::to_string(cfg.hop));
  }
  const auto n = static_cast<std::size_t>(cfg.window_len);
  const auto hop = static_cast<std::size_t>(cfg.hop);
  const std::size_t natural = s.frames == 0 ? 0 : (s.frames - 1) * hop + n;
  if (length == 0) length = natural;

  Waveform out(s.channels, length, s.sample_rate);
  const auto window = make_window(cfg.window, cfg.window_len);
  std::vector<double> norm(length, 0.0);
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t i = 0; i < n && t * hop + i < length; ++i) {
      norm[t * hop + i] += window[i] * window[i];
    }
  }

  // Near the edges the window energy tends to zero; flooring it keeps masked
  // (inconsistent) spectrograms from blowing up there.
  double norm_floor = 1e-10;
  for (double v : norm) norm_floor = std::max(norm_floor, 0.1 * v);

  const auto fft = detail::real_fft(cfg.window_len);
  std::vector<Complex> spectrum(s.bins);
  std::vector<double> frame(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t m = 0; m < s.channels; ++m) {
    auto y = out.channel(m);
    for (std::size_t t = 0; t < s.frames; ++t) {
      for (std::size_t f = 0; f < s.bins; ++f) spectrum[f] = s(t, f, m);
      fft->inverse(spectrum.data(), frame.data());
      for (std::size_t i = 0; i < n && t * hop + i < length; ++i) {
        y[t * hop + i] += frame[i] * scale * window[i];
      }
    }
    for (std::size_t i = 0; i < length; ++i) y[i] /= std::max(norm[i], norm_floor);
  }
  return out;
}

std::vector<Spectrogram> apply_masks(const Spectrogram& x, const MaskPosterior& z,
                                     std::size_t reference_channel) {
  if (z.frames != x.frames || z.bins != x.bins) {
    throw Error(ErrorKind::kDimension, "mask shape (" + std::to_string(z.frames) + ", " +
                                           std::to_string(z.bins) + ") does not match spectrogram (" +
                                           std::to_string(x.frames) + ", " +
                                           std::to_string(x.bins) + ")");
  }
  if (reference_channel >= x.channels) {
    throw Error(ErrorKind::kDimension, "reference channel " + std::to_string(reference_channel) +
                                           " out of range");
  }
  std::vector<Spectrogram> out;
  out.reserve(z.sources);
  for (std::size_t k = 0; k < z.sources; ++k) {
    Spectrogram y(x.frames, x.bins, 1, x.frame_hop, x.window_len, x.sample_rate);
    for (std::size_t t = 0; t < x.frames; ++t) {
      for (std::size_t f = 0; f < x.bins; ++f) {
        y(t, f, 0) = z(t, f, k) * x(t, f, reference_channel);
      }
    }
    out.push_back(std::move(y));
  }
  return out;
}

Spectrogram select_channel(const Spectrogram& x, std::size_t channel) {
  if (channel >= x.channels) throw Error(ErrorKind::kDimension, "channel out of range");
  Spectrogram y(x.frames, x.bins, 1, x.frame_hop, x.window_len, x.sample_rate);
  for (std::size_t t = 0; t < x.frames; ++t) {
    for (std::size_t f = 0; f < x.bins; ++f) y(t, f, 0) = x(t, f, channel);
  }
  return y;
}

double mean_power(const Spectrogram& x) {
  if (x.values.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& v : x.values) acc += std::norm(v);
  return acc / static_cast<double>(x.values.size());
}

}  // namespace cgmm
