// Prints one PASS/FAIL line per acceptance criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cgmmsep/checkpoint.hpp"
#include "cgmmsep/commands.hpp"
#include "cgmmsep/io.hpp"
#include "cgmmsep/log.hpp"
#include "cgmmsep/metrics.hpp"
#include "cgmmsep/simulate.hpp"
#include "cgmmsep/training.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace cgmm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<std::vector<double>> to_vectors(const std::vector<Waveform>& ws) {
  std::vector<std::vector<double>> out;
  for (const auto& w : ws) out.emplace_back(w.samples.begin(), w.samples.end());
  return out;
}

std::vector<std::vector<double>> masked_reference_channel(const Waveform& mixture, const MaskPosterior& z,
                                                          const StftConfig& stft_cfg, std::size_t channel) {
  const auto x = stft(mixture, stft_cfg);
  std::vector<Waveform> out;
  for (const auto& y : apply_masks(x, z, channel)) out.push_back(istft(y, stft_cfg, mixture.length));
  return to_vectors(out);
}

// Permutation-aligned SI-SDR of a separation, its DoA errors and the
// ideal-ratio-mask score of the same scene.
struct SceneScore {
  double si_sdr = 0.0;
  double oracle_si_sdr = 0.0;
  double worst_doa_error = 0.0;
};

SceneScore score_scene(const Config& cfg, const SimulatedMixture& sim, const SeparateOptions& opts) {
  const auto out = separate_waveform(cfg, sim.mixture, opts);
  const auto refs = sim.truth.reference_images;
  const auto aligned = permutation_align(to_vectors(out.sources), refs);
  const auto oracle = permutation_align(
      masked_reference_channel(sim.mixture, sim.truth.oracle_masks, cfg.stft_config(), cfg.em.reference_channel),
      refs);
  const auto errors = doa_error(out.ew, cfg.direction_grid(), sim.truth.azimuths_deg, aligned.permutation);
  return {aligned.mean, oracle.mean, *std::max_element(errors.begin(), errors.end())};
}

SimulatedMixture simulate_scene(const Config& cfg, std::uint64_t seed) {
  return mix_planewave(sample_scene(cfg.scene_sampler(), cfg.array_geometry(), seed), cfg.stft_config());
}

// --- criteria ------------------------------------------------------------------

Outcome oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t instances = 0;
  for (std::size_t T = 1; T <= 3; ++T) {
    for (std::size_t F = 1; F <= 3; ++F) {
      for (std::size_t K = 1; K <= 3; ++K) {
        for (std::size_t D = 1; D <= 3; ++D) {
          const std::uint64_t seed = ((T * 4 + F) * 4 + K) * 4 + D;
          const std::size_t M = 2 + seed % 2;
          const auto x = testutil::random_spectrogram(T, F, M, seed, 0.7);
          const auto p = oracle::random_params(T, F, K, D, M, 1000 + seed);
          const auto ew_in = testutil::random_doa(K, D, 2000 + seed);
          const auto ez_in = testutil::random_masks(T, F, K, 3000 + seed);
          const auto ez = e_step_masks(x, p, ew_in, 1e-300);
          const auto ew = e_step_doa(x, p, ez_in, 1e-300);
          const auto ez_ref = oracle::brute_force_masks(x, p, ew_in);
          const auto ew_ref = oracle::brute_force_doa(x, p, ez_in);
          for (std::size_t i = 0; i < ez.values.size(); ++i) {
            worst = std::max(worst, testutil::rel_err(ez.values[i], ez_ref.values[i]));
          }
          for (std::size_t i = 0; i < ew.values.size(); ++i) {
            worst = std::max(worst, testutil::rel_err(ew.values[i], ew_ref.values[i]));
          }
          ++instances;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 1.0,
          fmt("%zu instances, max rel error %.2e, %.3f s", instances, worst, secs)};
}

Outcome elbo_monotonicity() {
  const auto t0 = std::chrono::steady_clock::now();
  Config cfg;
  cfg.simulate.duration_s = 3.0;
  std::size_t elbo_ok = 0, objective_ok = 0;
  double worst_elbo = 0.0, worst_objective = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto out = separate_waveform(cfg, simulate_scene(cfg, 1000 + i).mixture, {});
    auto worst_drop = [](const std::vector<double>& trace) {
      double w = 0.0;
      for (std::size_t j = 1; j < trace.size(); ++j) {
        w = std::max(w, (trace[j - 1] - trace[j]) / std::abs(trace[j - 1]));
      }
      return w;
    };
    const double e = worst_drop(out.report.elbo_trace), o = worst_drop(out.report.objective_trace);
    elbo_ok += e <= 1e-6;
    objective_ok += o <= 1e-6;
    worst_elbo = std::max(worst_elbo, e);
    worst_objective = std::max(worst_objective, o);
  }
  const double secs = seconds_since(t0);
  return {elbo_ok == 20 && secs < 300.0,
          fmt("elbo_trace monotone on %zu/20 scenes (worst rel drop %.2e); ELBO + SCM log-prior monotone on %zu/20 "
              "(worst %.2e); %.0f s",
              elbo_ok, worst_elbo, objective_ok, worst_objective, secs)};
}

Outcome permutation_resolution() {
  Config cfg;
  cfg.simulate.min_separation_deg = 60.0;
  std::size_t ok = 0;
  std::vector<double> ratios;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto s = score_scene(cfg, simulate_scene(cfg, 2000 + i), {});
    const bool pass = s.worst_doa_error <= 10.0 && s.si_sdr >= 0.7 * s.oracle_si_sdr;
    ok += pass;
    ratios.push_back(s.si_sdr / s.oracle_si_sdr);
  }
  return {ok >= 45, fmt("%zu/50 scenes within 10 deg and >= 70%% of oracle SI-SDR (mean ratio %.2f)", ok,
                        mean(ratios))};
}

Outcome close_source_degradation() {
  Config close, wide;
  close.simulate.min_separation_deg = 20.0;
  close.simulate.max_separation_deg = 40.0;
  wide.simulate.min_separation_deg = 90.0;
  wide.simulate.max_separation_deg = 180.0;
  std::vector<double> a, b;
  for (std::uint64_t i = 0; i < 15; ++i) {
    a.push_back(score_scene(close, simulate_scene(close, 3000 + i), {}).si_sdr);
    b.push_back(score_scene(wide, simulate_scene(wide, 3500 + i), {}).si_sdr);
  }
  return {mean(a) < mean(b), fmt("mean SI-SDR %.2f dB at 20-40 deg vs %.2f dB at 90-180 deg", mean(a), mean(b))};
}

// Shared by the initialization-ordering and training-progress criteria.
struct TrainedModel {
  fs::path checkpoint;
  TrainReport report;
  Config cfg;
  double seconds = 0.0;
};

const TrainedModel& trained_model() {
  static const TrainedModel model = [] {
    TrainedModel m;
    const auto dir = testutil::scratch_dir("acceptance_train");
    m.cfg.simulate.source_kind = "low_high_bands";
    m.cfg.simulate.scenes = 64;
    m.cfg.simulate.seed = 5000;
    const auto t0 = std::chrono::steady_clock::now();
    cmd_simulate(m.cfg, dir / "corpus");
    m.checkpoint = dir / "model.cgck";
    m.report = cmd_train(m.cfg, dir / "corpus" / "manifest.csv", m.checkpoint, dir / "train_log.csv");
    m.seconds = seconds_since(t0);
    return m;
  }();
  return model;
}

Outcome initialization_ordering() {
  const auto& model = trained_model();
  Config cfg = model.cfg;
  cfg.simulate.min_separation_deg = 20.0;
  cfg.simulate.max_separation_deg = 55.0;
  SeparateOptions net;
  net.init = SeparateOptions::Init::kNetwork;
  net.checkpoint = model.checkpoint;
  std::vector<double> directional, network;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto sim = simulate_scene(cfg, 9000 + i);
    directional.push_back(score_scene(cfg, sim, {}).si_sdr);
    network.push_back(score_scene(cfg, sim, net).si_sdr);
  }
  return {mean(network) >= mean(directional),
          fmt("held-out close scenes: network init %.2f dB, directional init %.2f dB", mean(network),
              mean(directional))};
}

Outcome gradient_correctness() {
  const auto suite = cmd_gradcheck(Config{});
  return {suite.passed && suite.reference.max_rel_error <= 1e-4 && suite.seconds < 30.0,
          fmt("max rel error %.2e (mask %.2e, localization %.2e) over %zu entries, %.2f s",
              suite.reference.max_rel_error, suite.reference.max_rel_error_mask, suite.reference.max_rel_error_loc,
              suite.reference.checked, suite.seconds)};
}

Outcome training_progress() {
  const auto& model = trained_model();
  const auto& epochs = model.report.epochs;
  const double first = epochs.front().mean_loss, last = epochs.back().mean_loss;
  // Least-squares slope of the epoch losses.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(epochs.size());
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    const double x = static_cast<double>(e), y = epochs[e].mean_loss;
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);

  Config cfg = model.cfg;
  const auto dir = testutil::scratch_dir("acceptance_mono");
  std::vector<double> trained, baseline;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto sim = simulate_scene(cfg, 9500 + i);
    const auto scene_dir = dir / ("scene_" + std::to_string(i));
    fs::create_directories(scene_dir);
    write_wav(scene_dir / "mixture.wav", sim.mixture);
    const std::size_t K = cmd_infer_mono(model.checkpoint, scene_dir / "mixture.wav", scene_dir);
    std::vector<Waveform> est;
    for (std::size_t k = 0; k < K; ++k) est.push_back(read_wav(scene_dir / ("source_" + std::to_string(k) + ".wav")));
    trained.push_back(permutation_align(to_vectors(est), sim.truth.reference_images).mean);
    const std::vector<double> mix(sim.mixture.channel(0).begin(), sim.mixture.channel(0).end());
    baseline.push_back(permutation_align({mix, mix}, sim.truth.reference_images).mean);
  }
  const bool pass = last < first && slope < 0.0 && mean(trained) >= mean(baseline) + 3.0;
  return {pass, fmt("epoch loss %.3f -> %.3f over %zu epochs (slope %.3f, %.0f s); infer-mono %.2f dB vs "
                    "uniform-mask %.2f dB",
                    first, last, epochs.size(), slope, model.seconds, mean(trained), mean(baseline))};
}

Outcome cross_module_consistency() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t T = 1 + rng() % 4, F = 2 + rng() % 3, K = 1 + rng() % 3, D = 1 + rng() % 5;
    const auto geom = ArrayGeometry::uniform_circular(4, 0.08);
    const auto tpl = build_templates(geom, DirectionGrid{0.0, 360.0 / static_cast<double>(D), D}, F, 8000, 1e-2);
    const auto x = testutil::random_spectrogram(T, F, 4, 100 + i, 1.3);
    const auto ez = testutil::random_masks(T, F, K, 200 + i);
    const auto ew = testutil::random_doa(K, D, 300 + i);
    const auto p_ref = oracle::random_params(T, F, K, D, 4, 400 + i);
    const double lam = avg_power(x);
    const auto tr = training_elbo(x, ez, ew, p_ref.activation, p_ref.direction_prior, tpl, lam, 1e-300);

    ModelParams p = p_ref;
    p.scm = tpl.scms();
    p.psd.assign(T * F * K, lam);
    const double TF = static_cast<double>(T * F);
    const double em = elbo(x, p, ez, ew);
    worst = std::max(worst, testutil::rel_err(-tr.loss * TF, em + TF * 4.0 * (std::log(std::numbers::pi) + std::log(lam))));
  }
  return {worst <= 1e-10, fmt("100 random instances, max rel difference %.2e", worst)};
}

Outcome image_method() {
  double worst_direct = 0.0;
  bool delays_exact = true;
  for (int samples : {16, 40, 64, 80}) {
    Room room;
    room.dims = {10.0, 10.0, 4.0};
    room.max_order = 0;
    const Eigen::Vector3d mic(5.0, 5.0, 2.0);
    const double d = samples * 343.0 / 8000.0;
    const auto h = image_method_rir(room, mic + Eigen::Vector3d(d * 0.6, d * 0.8, 0.0), mic, 8000);
    const auto peak = static_cast<std::size_t>(std::max_element(h.begin(), h.end(), [](double a, double b) {
                                                 return std::abs(a) < std::abs(b);
                                               }) - h.begin());
    delays_exact = delays_exact && peak == static_cast<std::size_t>(samples);
    worst_direct = std::max(worst_direct, testutil::rel_err(h[peak], 1.0 / (4.0 * std::numbers::pi * d)));
  }
  double worst_energy = 0.0;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (int i = 0; i < 10; ++i) {
    Room room;
    room.dims = {4.0 + 4.0 * u(rng), 4.0 + 4.0 * u(rng), 2.5 + u(rng)};
    room.absorption = u(rng);
    room.max_order = i % 3;
    const Eigen::Vector3d src(room.dims(0) * u(rng), room.dims(1) * u(rng), room.dims(2) * u(rng));
    const Eigen::Vector3d mic(room.dims(0) * u(rng), room.dims(1) * u(rng), room.dims(2) * u(rng));
    if ((src - mic).norm() < 0.5) continue;
    const auto h = image_method_rir(room, src, mic, 8000);
    const auto ref = oracle::oracle_rir(room, src, mic, 8000, h.size());
    worst_energy = std::max(worst_energy, testutil::rel_err(oracle::energy(h), oracle::energy(ref)));
  }
  return {delays_exact && worst_direct <= 1e-10 && worst_energy <= 1e-10,
          fmt("direct path delays exact: %s, amplitude rel error %.2e; order <= 2 energy rel error %.2e",
              delays_exact ? "yes" : "no", worst_direct, worst_energy)};
}

}  // namespace

int main(int argc, char** argv) {
  logger().set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle-equivalence", oracle_equivalence},
      {"elbo-monotonicity", elbo_monotonicity},
      {"permutation-resolution", permutation_resolution},
      {"close-source-degradation", close_source_degradation},
      {"initialization-ordering", initialization_ordering},
      {"gradient-correctness", gradient_correctness},
      {"training-progress", training_progress},
      {"cross-module-consistency", cross_module_consistency},
      {"image-method", image_method},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria failed\n", failed);
  return 0;
}
