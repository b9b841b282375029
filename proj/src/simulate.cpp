#include "cgmmsep/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cgmmsep/error.hpp"
#include "fft.hpp"

namespace cgmm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kSincHalfWidth = 40;  // 81 taps

void normalize_rms(std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  const double rms = std::sqrt(acc / static_cast<double>(std::max<std::size_t>(1, x.size())));
  if (rms > 0.0) {
    for (double& v : x) v /= rms;
  }
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Band-limited fractional delay of a finite signal; the result keeps the input
// length. Positive delay_samples moves the signal later in time.
std::vector<double> fractional_delay(const std::vector<double>& s, double delay_samples) {
  const std::size_t pad = 64 + static_cast<std::size_t>(std::ceil(std::abs(delay_samples)));
  std::size_t n = s.size() + 2 * pad;
  n += n % 2;
  std::vector<double> buf(n, 0.0);
  std::copy(s.begin(), s.end(), buf.begin() + static_cast<std::ptrdiff_t>(pad));
  const auto fft = detail::real_fft(static_cast<int>(n));
  std::vector<Complex> spec(n / 2 + 1);
  fft->forward(buf.data(), spec.data());
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double phase = -kTwoPi * static_cast<double>(k) * delay_samples / static_cast<double>(n);
    if (k == n / 2) {
      spec[k] *= std::cos(phase);  // keep the Nyquist bin real
    } else {
      spec[k] *= std::polar(1.0, phase);
    }
  }
  fft->inverse(spec.data(), buf.data());
  std::vector<double> out(s.size());
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = buf[pad + i] * scale;
  return out;
}

void add_sensor_noise(Waveform& w, double snr_db, std::uint64_t seed) {
  double power = 0.0;
  for (double v : w.samples) power += v * v;
  power /= static_cast<double>(std::max<std::size_t>(1, w.samples.size()));
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& v : w.samples) v += noise(rng);
}

bool strictly_inside(const Room& room, const Eigen::Vector3d& p) {
  return (p.array() > 0.0).all() && (p.array() < room.dims.array()).all();
}

double windowed_sinc(double arg) {
  if (std::abs(arg) > kSincHalfWidth + 0.5) return 0.0;
  const double window = 0.5 * (1.0 + std::cos(std::numbers::pi * arg / (kSincHalfWidth + 1.0)));
  if (std::abs(arg) < 1e-12) return window;
  return window * std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
}

std::vector<double> convolve(const std::vector<double>& x, const std::vector<double>& h) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t j = 0; j < h.size(); ++j) {
    if (h[j] == 0.0) continue;
    for (std::size_t i = j; i < x.size(); ++i) y[i] += h[j] * x[i - j];
  }
  return y;
}

SimulatedMixture assemble(const Scene& scene, const std::vector<std::vector<std::vector<double>>>& images,
                          const StftConfig& stft_cfg) {
  const std::size_t mics = scene.geometry.num_mics();
  const std::size_t length = scene.sources.front().size();
  SimulatedMixture out;
  out.mixture = Waveform(mics, length, scene.sample_rate);
  for (std::size_t k = 0; k < images.size(); ++k) {
    for (std::size_t m = 0; m < mics; ++m) {
      auto ch = out.mixture.channel(m);
      for (std::size_t n = 0; n < length; ++n) ch[n] += images[k][m][n];
    }
    out.truth.reference_images.push_back(images[k][scene.reference_channel]);
  }
  if (scene.snr_db && std::isfinite(*scene.snr_db)) add_sensor_noise(out.mixture, *scene.snr_db, scene.noise_seed);
  out.truth.azimuths_deg = scene.azimuths_deg;
  out.truth.oracle_masks = ratio_masks(out.truth.reference_images, scene.sample_rate, stft_cfg);
  return out;
}

}  // namespace

SourceKind parse_source_kind(const std::string& name) {
  if (name == "speech_like") return SourceKind::kSpeechLike;
  if (name == "band_noise") return SourceKind::kBandNoise;
  if (name == "am_tone") return SourceKind::kAmTone;
  if (name == "low_high_bands") return SourceKind::kLowHighBands;
  throw Error(ErrorKind::kInvalidConfig, "unknown source kind '" + name + "'");
}

std::string to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::kSpeechLike: return "speech_like";
    case SourceKind::kBandNoise: return "band_noise";
    case SourceKind::kAmTone: return "am_tone";
    case SourceKind::kLowHighBands: return "low_high_bands";
  }
  return "speech_like";
}

std::vector<double> speech_like_source(std::size_t length, int sample_rate, std::mt19937_64& rng) {
  const double fs = sample_rate;
  const double base_f0 = uniform(rng, 100.0, 220.0);
  const double vib_rate = uniform(rng, 0.3, 1.2);
  const double vib_phase = uniform(rng, 0.0, kTwoPi);
  const double drift_rate = uniform(rng, 2.0, 5.0);
  const double drift_phase = uniform(rng, 0.0, kTwoPi);
  const double formant1 = uniform(rng, 350.0, 900.0);
  const double formant2 = uniform(rng, 1000.0, 2600.0);
  const double f0_max = base_f0 * 1.15;
  const int harmonics = std::max(1, static_cast<int>(0.45 * fs / f0_max));

  std::vector<double> amp(static_cast<std::size_t>(harmonics));
  for (int h = 1; h <= harmonics; ++h) {
    const double fh = h * base_f0;
    const double g1 = std::exp(-std::pow((fh - formant1) / 180.0, 2.0));
    const double g2 = std::exp(-std::pow((fh - formant2) / 300.0, 2.0));
    amp[static_cast<std::size_t>(h - 1)] = (1.0 + 3.0 * g1 + 2.0 * g2) / std::pow(h, 0.8);
  }

  // On/off syllable gating with 20 ms raised-cosine ramps.
  std::vector<double> envelope(length, 0.0);
  const auto ramp = static_cast<std::size_t>(0.02 * fs);
  std::size_t pos = static_cast<std::size_t>(uniform(rng, 0.0, 0.1) * fs);
  while (pos < length) {
    const auto on = static_cast<std::size_t>(uniform(rng, 0.12, 0.35) * fs);
    for (std::size_t i = 0; i < on && pos + i < length; ++i) {
      double g = 1.0;
      if (i < ramp) g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / ramp);
      if (on - i <= ramp) g = std::min(g, 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(on - i) / ramp));
      envelope[pos + i] = g;
    }
    pos += on + static_cast<std::size_t>(uniform(rng, 0.05, 0.2) * fs);
  }

  std::vector<double> s(length, 0.0);
  double phase = 0.0;
  for (std::size_t n = 0; n < length; ++n) {
    const double t = static_cast<double>(n) / fs;
    const double f0 = base_f0 * (1.0 + 0.08 * std::sin(kTwoPi * vib_rate * t + vib_phase) +
                                 0.03 * std::sin(kTwoPi * drift_rate * t + drift_phase));
    phase += kTwoPi * f0 / fs;
    if (envelope[n] == 0.0) continue;
    double v = 0.0;
    for (int h = 1; h <= harmonics; ++h) v += amp[static_cast<std::size_t>(h - 1)] * std::sin(h * phase);
    s[n] = envelope[n] * v;
  }
  normalize_rms(s);
  return s;
}

std::vector<double> band_noise_source(std::size_t length, int sample_rate, double lo_hz, double hi_hz,
                                      std::mt19937_64& rng) {
  std::size_t n = length + length % 2;
  std::vector<double> buf(n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : buf) v = gauss(rng);
  const auto fft = detail::real_fft(static_cast<int>(n));
  std::vector<Complex> spec(n / 2 + 1);
  fft->forward(buf.data(), spec.data());
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double f_hz = static_cast<double>(k) * sample_rate / static_cast<double>(n);
    if (f_hz < lo_hz || f_hz > hi_hz) spec[k] = 0.0;
  }
  fft->inverse(spec.data(), buf.data());
  buf.resize(length);
  normalize_rms(buf);
  return buf;
}

std::vector<double> am_tone_source(std::size_t length, int sample_rate, std::mt19937_64& rng) {
  const double f = uniform(rng, 200.0, 3000.0);
  const double rate = uniform(rng, 2.0, 6.0);
  const double phase = uniform(rng, 0.0, kTwoPi);
  std::vector<double> s(length);
  for (std::size_t n = 0; n < length; ++n) {
    const double t = static_cast<double>(n) / sample_rate;
    s[n] = (1.0 + 0.8 * std::sin(kTwoPi * rate * t + phase)) * std::sin(kTwoPi * f * t);
  }
  normalize_rms(s);
  return s;
}

void Scene::validate() const {
  geometry.validate();
  if (sources.empty()) throw Error(ErrorKind::kInvalidConfig, "scene needs at least one source");
  if (azimuths_deg.size() != sources.size()) {
    throw Error(ErrorKind::kInvalidConfig, "scene needs one azimuth per source");
  }
  for (const auto& s : sources) {
    if (s.size() != sources.front().size() || s.empty()) {
      throw Error(ErrorKind::kInvalidConfig, "scene sources must share a nonzero length");
    }
  }
  for (double az : azimuths_deg) {
    if (!(az >= 0.0 && az < 360.0)) throw Error(ErrorKind::kInvalidConfig, "azimuths must lie in [0, 360)");
  }
  if (reference_channel >= geometry.num_mics()) {
    throw Error(ErrorKind::kInvalidConfig, "reference channel out of range");
  }
  if (room) {
    if (positions.size() != sources.size()) {
      throw Error(ErrorKind::kInvalidConfig, "reverberant scene needs one position per source");
    }
    for (const auto& p : positions) {
      if (!strictly_inside(*room, p)) throw Error(ErrorKind::kInvalidConfig, "source outside the room");
    }
    for (const auto& m : geometry.mic_positions) {
      if (!strictly_inside(*room, array_center + m)) {
        throw Error(ErrorKind::kInvalidConfig, "microphone outside the room");
      }
    }
  }
}

MaskPosterior ratio_masks(const std::vector<std::vector<double>>& images, int sample_rate,
                          const StftConfig& stft_cfg) {
  std::vector<Spectrogram> specs;
  for (const auto& img : images) {
    Waveform w(1, img.size(), sample_rate);
    std::copy(img.begin(), img.end(), w.samples.begin());
    specs.push_back(stft(w, stft_cfg));
  }
  const std::size_t K = images.size();
  MaskPosterior z(specs.front().frames, specs.front().bins, K);
  for (std::size_t t = 0; t < z.frames; ++t) {
    for (std::size_t f = 0; f < z.bins; ++f) {
      double total = 0.0;
      for (std::size_t k = 0; k < K; ++k) total += std::norm(specs[k](t, f, 0));
      for (std::size_t k = 0; k < K; ++k) {
        z(t, f, k) = total > 1e-30 ? std::norm(specs[k](t, f, 0)) / total : 1.0 / static_cast<double>(K);
      }
    }
  }
  return z;
}

SimulatedMixture mix_planewave(const Scene& scene, const StftConfig& stft_cfg) {
  scene.validate();
  const auto& geom = scene.geometry;
  std::vector<std::vector<std::vector<double>>> images(scene.sources.size());
  for (std::size_t k = 0; k < scene.sources.size(); ++k) {
    const double az = scene.azimuths_deg[k] * std::numbers::pi / 180.0;
    const Eigen::Vector3d toward(std::cos(az), std::sin(az), 0.0);
    for (std::size_t m = 0; m < geom.num_mics(); ++m) {
      const double tau = -geom.mic_positions[m].dot(toward) / geom.speed_of_sound;
      images[k].push_back(fractional_delay(scene.sources[k], tau * scene.sample_rate));
    }
  }
  return assemble(scene, images, stft_cfg);
}

std::vector<double> image_method_rir(const Room& room, const Eigen::Vector3d& source,
                                     const Eigen::Vector3d& mic, int sample_rate,
                                     double speed_of_sound) {
  if (!strictly_inside(room, source) || !strictly_inside(room, mic)) {
    throw Error(ErrorKind::kInvalidConfig, "source and microphone must lie strictly inside the room");
  }
  if (!(room.absorption > 0.0 && room.absorption <= 1.0)) {
    throw Error(ErrorKind::kInvalidConfig, "absorption must lie in (0, 1]");
  }
  if (room.max_order < 0) throw Error(ErrorKind::kInvalidConfig, "max_order must be >= 0");
  if ((source - mic).norm() < 1e-9) {
    throw Error(ErrorKind::kSingularDistance, "source coincides with the microphone");
  }
  const double reflection = std::sqrt(1.0 - room.absorption);
  const int order = room.max_order;

  struct Image {
    double delay;
    double gain;
  };
  std::vector<Image> taps;
  double max_delay = 0.0;
  for (int nx = -order; nx <= order; ++nx) {
    for (int ny = -order; ny <= order; ++ny) {
      for (int nz = -order; nz <= order; ++nz) {
        for (int q = 0; q < 8; ++q) {
          const int n[3] = {nx, ny, nz};
          const int qs[3] = {q & 1, (q >> 1) & 1, (q >> 2) & 1};
          int reflections = 0;
          Eigen::Vector3d image;
          for (int i = 0; i < 3; ++i) {
            reflections += std::abs(2 * n[i] - qs[i]);
            image(i) = (1 - 2 * qs[i]) * source(i) + 2.0 * n[i] * room.dims(i);
          }
          if (reflections > order) continue;
          const double dist = (image - mic).norm();
          const double gain = std::pow(reflection, reflections) / (4.0 * std::numbers::pi * dist);
          const double delay = dist / speed_of_sound * sample_rate;
          taps.push_back({delay, gain});
          max_delay = std::max(max_delay, delay);
        }
      }
    }
  }
  std::vector<double> h(static_cast<std::size_t>(std::ceil(max_delay)) + kSincHalfWidth + 1, 0.0);
  for (const auto& tap : taps) {
    if (tap.gain == 0.0) continue;
    const auto center = static_cast<long>(std::lround(tap.delay));
    for (long i = center - kSincHalfWidth; i <= center + kSincHalfWidth; ++i) {
      if (i < 0 || i >= static_cast<long>(h.size())) continue;
      h[static_cast<std::size_t>(i)] += tap.gain * windowed_sinc(static_cast<double>(i) - tap.delay);
    }
  }
  return h;
}

double absorption_from_rt60(const Eigen::Vector3d& dims, double rt60) {
  const double volume = dims.prod();
  const double surface = 2.0 * (dims(0) * dims(1) + dims(0) * dims(2) + dims(1) * dims(2));
  return std::clamp(0.161 * volume / (surface * rt60), 1e-3, 1.0);
}

SimulatedMixture mix_reverberant(const Scene& scene, const StftConfig& stft_cfg) {
  scene.validate();
  if (!scene.room) throw Error(ErrorKind::kInvalidConfig, "reverberant mixing needs a room");
  const auto& geom = scene.geometry;
  std::vector<std::vector<std::vector<double>>> images(scene.sources.size());
  for (std::size_t k = 0; k < scene.sources.size(); ++k) {
    for (std::size_t m = 0; m < geom.num_mics(); ++m) {
      const auto rir = image_method_rir(*scene.room, scene.positions[k], scene.array_center + geom.mic_positions[m],
                                        scene.sample_rate, geom.speed_of_sound);
      images[k].push_back(convolve(scene.sources[k], rir));
    }
  }
  return assemble(scene, images, stft_cfg);
}

Scene sample_scene(const SceneSampler& sampler, const ArrayGeometry& geometry, std::uint64_t seed) {
  if (sampler.num_sources == 0) throw Error(ErrorKind::kInvalidConfig, "sampler needs at least one source");
  if (sampler.source_kind == SourceKind::kLowHighBands && sampler.num_sources != 2) {
    throw Error(ErrorKind::kInvalidConfig, "low_high_bands scenes have exactly two sources");
  }
  std::mt19937_64 rng(seed);
  Scene scene;
  scene.sample_rate = sampler.sample_rate;
  scene.geometry = geometry;
  scene.snr_db = sampler.snr_db;
  const auto length = static_cast<std::size_t>(std::lround(sampler.duration_s * sampler.sample_rate));

  for (std::size_t k = 0; k < sampler.num_sources; ++k) {
    std::vector<double> s;
    switch (sampler.source_kind) {
      case SourceKind::kSpeechLike: s = speech_like_source(length, sampler.sample_rate, rng); break;
      case SourceKind::kBandNoise: {
        const double lo = uniform(rng, 100.0, 2000.0);
        s = band_noise_source(length, sampler.sample_rate, lo, lo + uniform(rng, 500.0, 1500.0), rng);
        break;
      }
      case SourceKind::kAmTone: s = am_tone_source(length, sampler.sample_rate, rng); break;
      case SourceKind::kLowHighBands:
        s = k == 0 ? band_noise_source(length, sampler.sample_rate, kLowBandLoHz, kLowBandHiHz, rng)
                   : band_noise_source(length, sampler.sample_rate, kHighBandLoHz, kHighBandHiHz, rng);
        break;
    }
    if (k > 0 && sampler.level_range_db > 0.0) {
      const double gain = std::pow(10.0, uniform(rng, -sampler.level_range_db, sampler.level_range_db) / 20.0);
      for (double& v : s) v *= gain;
    }
    scene.sources.push_back(std::move(s));
  }

  const double first = uniform(rng, 0.0, 360.0);
  scene.azimuths_deg.push_back(first);
  for (std::size_t k = 1; k < sampler.num_sources; ++k) {
    double az = 0.0;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double sep = uniform(rng, sampler.min_separation_deg, sampler.max_separation_deg);
      const double sign = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
      az = std::fmod(first + sign * sep + 720.0, 360.0);
      bool ok = true;
      for (double other : scene.azimuths_deg) {
        ok = ok && circular_distance_deg(az, other) >= sampler.min_separation_deg - 1e-9;
      }
      if (ok) break;
    }
    scene.azimuths_deg.push_back(az);
  }

  if (sampler.reverberant) {
    Room room;
    for (int i = 0; i < 3; ++i) room.dims(i) = uniform(rng, sampler.room_min(i), sampler.room_max(i));
    room.absorption = absorption_from_rt60(room.dims, uniform(rng, sampler.rt60_min, sampler.rt60_max));
    room.max_order = sampler.max_order;
    scene.room = room;
    scene.array_center = room.dims / 2.0;
    for (double az_deg : scene.azimuths_deg) {
      const double az = az_deg * std::numbers::pi / 180.0;
      const Eigen::Vector3d dir(std::cos(az), std::sin(az), 0.0);
      double dist = uniform(rng, sampler.source_distance_min, sampler.source_distance_max);
      // keep 0.3 m clear of the walls
      const double reach = std::min(room.dims(0), room.dims(1)) / 2.0 - 0.3;
      dist = std::min(dist, reach);
      scene.positions.push_back(scene.array_center + dist * dir);
    }
  }
  scene.noise_seed = rng();
  return scene;
}

}  // namespace cgmm
