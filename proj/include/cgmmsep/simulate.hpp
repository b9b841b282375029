#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cgmmsep/posterior.hpp"
#include "cgmmsep/signal.hpp"
#include "cgmmsep/spatial.hpp"

namespace cgmm {

enum class SourceKind {
  kSpeechLike,     // gated harmonic complex with a wandering pitch
  kBandNoise,      // white noise band-limited to [band_lo, band_hi]
  kAmTone,         // sinusoid with slow amplitude modulation
  kLowHighBands,   // source 0 low-band noise, source 1 high-band noise
};

SourceKind parse_source_kind(const std::string& name);
std::string to_string(SourceKind kind);

// Unit-RMS synthetic test sources.
std::vector<double> speech_like_source(std::size_t length, int sample_rate, std::mt19937_64& rng);
std::vector<double> band_noise_source(std::size_t length, int sample_rate, double lo_hz, double hi_hz,
                                      std::mt19937_64& rng);
std::vector<double> am_tone_source(std::size_t length, int sample_rate, std::mt19937_64& rng);

// Band edges of the two spectral classes used by kLowHighBands.
inline constexpr double kLowBandLoHz = 100.0;
inline constexpr double kLowBandHiHz = 1700.0;
inline constexpr double kHighBandLoHz = 2300.0;
inline constexpr double kHighBandHiHz = 3800.0;

struct Room {
  Eigen::Vector3d dims{6.0, 5.0, 3.0};
  double absorption = 0.3;
  int max_order = 2;
};

struct Scene {
  int sample_rate = 8000;
  ArrayGeometry geometry;
  std::vector<std::vector<double>> sources;   // already level-adjusted
  std::vector<double> azimuths_deg;           // far-field DoA per source
  // Reverberant scenes only: room, array centre and source positions (m).
  std::optional<Room> room;
  Eigen::Vector3d array_center = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> positions;
  // nullopt disables the sensor noise.
  std::optional<double> snr_db = 30.0;
  std::uint64_t noise_seed = 0;
  std::size_t reference_channel = 0;

  void validate() const;
};

struct GroundTruth {
  // Each source as observed at the reference microphone.
  std::vector<std::vector<double>> reference_images;
  std::vector<double> azimuths_deg;
  // Ratio masks |S_k|^2 / sum_j |S_j|^2 of the reference images.
  MaskPosterior oracle_masks;
};

struct SimulatedMixture {
  Waveform mixture;
  GroundTruth truth;
};

// Far-field anechoic mixing: every source reaches mic m delayed by
// tau_m = -(r_m . u) / c (band-limited fractional delay), images are summed and
// white Gaussian noise is added at the requested SNR.
SimulatedMixture mix_planewave(const Scene& scene, const StftConfig& stft_cfg);

// Image-source impulse response. Each image contributes
// r^order / (4 pi dist) at delay dist / c through an 81-tap Hann-windowed sinc.
std::vector<double> image_method_rir(const Room& room, const Eigen::Vector3d& source,
                                     const Eigen::Vector3d& mic, int sample_rate,
                                     double speed_of_sound = 343.0);

// Sabine estimate of the absorption coefficient giving the requested RT60.
double absorption_from_rt60(const Eigen::Vector3d& dims, double rt60);

// Convolves every source with the image-method RIR of every microphone.
SimulatedMixture mix_reverberant(const Scene& scene, const StftConfig& stft_cfg);

MaskPosterior ratio_masks(const std::vector<std::vector<double>>& images, int sample_rate,
                          const StftConfig& stft_cfg);

struct SceneSampler {
  int sample_rate = 8000;
  double duration_s = 2.0;
  std::size_t num_sources = 2;
  SourceKind source_kind = SourceKind::kSpeechLike;
  double min_separation_deg = 0.0;
  double max_separation_deg = 180.0;
  // Second and later sources are scaled by a uniform draw in +/- this range.
  double level_range_db = 5.0;
  std::optional<double> snr_db = 30.0;
  bool reverberant = false;
  Eigen::Vector3d room_min{5.0, 5.0, 3.0};
  Eigen::Vector3d room_max{10.0, 10.0, 4.0};
  double rt60_min = 0.2;
  double rt60_max = 0.4;
  int max_order = 2;
  double source_distance_min = 1.0;
  double source_distance_max = 2.0;
};

// Draws a scene from the sampler. Azimuths are continuous; for K = 2 their
// circular separation lies in [min_separation, max_separation].
Scene sample_scene(const SceneSampler& sampler, const ArrayGeometry& geometry, std::uint64_t seed);

}  // namespace cgmm
