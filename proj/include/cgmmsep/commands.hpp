#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cgmmsep/config.hpp"
#include "cgmmsep/em.hpp"
#include "cgmmsep/error.hpp"
#include "cgmmsep/signal.hpp"
#include "cgmmsep/training.hpp"

namespace cgmm {

// 0 success, 1 usage or config, 2 numeric, 3 I/O.
int exit_code(ErrorKind kind);

// One scene of a manifest CSV (header: scene_id,path,references,azimuths_deg,seed).
// Only `path` is required; relative paths resolve against the manifest's folder.
struct ManifestEntry {
  std::string scene_id;
  std::filesystem::path path;
  std::vector<std::filesystem::path> references;
  std::vector<double> azimuths_deg;
  std::optional<std::uint64_t> seed;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Writes <out>/<scene_id>/mixture.wav and ref_<k>.wav for simulate.scenes scenes
// (scene i uses seed simulate.seed + i) plus <out>/manifest.csv. The returned
// entries carry paths resolved against out_dir.
std::vector<ManifestEntry> cmd_simulate(const Config& cfg, const std::filesystem::path& out_dir,
                                        std::size_t jobs = 1);

struct SeparateOptions {
  enum class Init { kDirectional, kNetwork };
  Init init = Init::kDirectional;
  std::filesystem::path checkpoint;  // for kNetwork
};

struct SeparateReport {
  std::size_t sources = 0;
  std::vector<double> azimuths_deg;  // argmax of q(w) per output
  std::vector<double> elbo_trace;
  std::vector<double> objective_trace;
};

struct SeparationOutput {
  MaskPosterior ez;                 // after merging down to em.sources
  DoaPosterior ew;
  std::vector<Waveform> sources;    // mono, same length as the mixture
  SeparateReport report;
  std::size_t em_classes = 0;
  EmDiagnostics diagnostics;
};

// In-memory separation of a multichannel waveform; no files are written.
SeparationOutput separate_waveform(const Config& cfg, const Waveform& mixture, const SeparateOptions& opts);

// Runs EM on a multichannel WAV and writes source_<k>.wav, masks.cgtn, doa.cgtn,
// elbo.csv (iteration,elbo,objective) and run.json into out_dir.
SeparateReport cmd_separate(const Config& cfg, const std::filesystem::path& wav_in,
                            const std::filesystem::path& out_dir, const SeparateOptions& opts);

// Separates every manifest scene into <out>/<scene_id>/.
void cmd_separate_manifest(const Config& cfg, const std::filesystem::path& manifest,
                           const std::filesystem::path& out_dir, const SeparateOptions& opts,
                           std::size_t jobs = 1);

// Network masks on the first channel only; writes source_<k>.wav, masks.cgtn and run.json.
std::size_t cmd_infer_mono(const std::filesystem::path& checkpoint, const std::filesystem::path& wav_in,
                           const std::filesystem::path& out_dir);

struct TrainReport {
  std::vector<EpochSummary> epochs;
  std::size_t examples = 0;
  std::size_t skipped = 0;
};

// Trains ReferenceMaskNet and the localization map on the manifest mixtures,
// saving out_checkpoint after every epoch and one log row per step.
TrainReport cmd_train(const Config& cfg, const std::filesystem::path& manifest,
                      const std::filesystem::path& out_checkpoint, const std::filesystem::path& log_csv);

struct EvaluateReport {
  std::size_t scenes = 0;
  std::size_t failures = 0;
  double mean_si_sdr = 0.0;
  double std_si_sdr = 0.0;
};

// Reads <results>/<scene_id>/ estimates, aligns them with the references and
// writes the metrics CSV (per-scene rows plus mean and std rows).
EvaluateReport cmd_evaluate(const Config& cfg, const std::filesystem::path& manifest,
                            const std::filesystem::path& results_dir, const std::filesystem::path& out_csv,
                            std::size_t jobs = 1);

struct GradcheckSuite {
  GradcheckReport reference;  // ReferenceMaskNet + localization map
  GradcheckReport linear;     // LinearMaskNet + localization map
  double seconds = 0.0;
  bool passed = false;
};

GradcheckSuite cmd_gradcheck(const Config& cfg);

}  // namespace cgmm
