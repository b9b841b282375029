#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cgmmsep/em.hpp"
#include "cgmmsep/network.hpp"
#include "cgmmsep/signal.hpp"
#include "cgmmsep/simulate.hpp"
#include "cgmmsep/spatial.hpp"
#include "cgmmsep/training.hpp"

namespace cgmm {

// Every tunable of the toolkit. Stored as TOML-style `key = value` lines under
// [geometry], [grid], [stft], [em], [train], [simulate] and [paths].
struct Config {
  struct Geometry {
    std::size_t mics = 4;
    double diameter_m = 0.08;
    double speed_of_sound = 343.0;
    // Explicit mic positions in metres, e.g. [[0.04, 0, 0], [0, 0.04, 0]];
    // when set they replace the uniform circle and fix `mics`.
    std::vector<std::array<double, 3>> positions;

    bool operator==(const Geometry&) const = default;
  } geometry;

  struct Grid {
    double start_deg = 0.0;
    double step_deg = 5.0;
    std::size_t directions = 72;

    bool operator==(const Grid&) const = default;
  } grid;

  struct Stft {
    int sample_rate = 8000;
    int window_len = 512;
    int hop = 128;
    std::string window = "hann";

    bool operator==(const Stft&) const = default;
  } stft;

  struct Em {
    std::size_t sources = 2;
    // Classes used by directional init; merged down to `sources` afterwards.
    std::size_t init_classes = 6;
    std::size_t iterations = 50;
    std::optional<double> nu;  // defaults to M + 5
    double epsilon = 1e-2;
    double lambda_floor = 1e-8;
    double posterior_floor = 1e-12;
    std::string prior_scale_numerator = "G";  // "G" or "(nu-M)G"
    std::size_t reference_channel = 0;

    bool operator==(const Em&) const = default;
  } em;

  struct Train {
    double learning_rate = 1e-3;
    double lr_decay = 0.7;
    std::size_t batch_size = 8;
    std::size_t epochs = 20;
    bool omega_stop_gradient = false;
    std::uint64_t seed = 0;
    double initial_log_temperature = kDefaultLogTemperature;
    std::size_t context = 2;
    std::size_t hidden = 128;

    bool operator==(const Train&) const = default;
  } train;

  struct Simulate {
    std::size_t scenes = 8;
    double duration_s = 2.0;
    std::string source_kind = "speech_like";
    double min_separation_deg = 0.0;
    double max_separation_deg = 180.0;
    double level_range_db = 5.0;
    std::optional<double> snr_db = 30.0;  // unset disables sensor noise
    bool reverberant = false;
    double rt60_min = 0.2;
    double rt60_max = 0.4;
    int max_order = 2;
    std::uint64_t seed = 0;

    bool operator==(const Simulate&) const = default;
  } simulate;

  struct Paths {
    std::string output_dir = "out";
    std::string manifest;
    std::string checkpoint;
    std::string train_log;

    bool operator==(const Paths&) const = default;
  } paths;

  // Checks every derived type; throws kInvalidConfig.
  void validate() const;

  ArrayGeometry array_geometry() const;
  DirectionGrid direction_grid() const;
  StftConfig stft_config() const;
  Hyperparams hyperparams() const;
  EmConfig em_config() const;
  TrainConfig train_config() const;
  SceneSampler scene_sampler() const;

  bool operator==(const Config&) const = default;
};

Config parse_config(const std::string& text, const std::string& origin = "<config>");
Config load_config(const std::filesystem::path& path);
std::string serialize_config(const Config& cfg);

// Applies "section.key=value" (value in config syntax, strings may be bare).
void apply_override(Config& cfg, const std::string& assignment);

}  // namespace cgmm
