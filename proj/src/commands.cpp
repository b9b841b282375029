#include "cgmmsep/commands.hpp"

#include <algorithm>
#include <charconv>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "cgmmsep/checkpoint.hpp"
#include "cgmmsep/em.hpp"
#include "cgmmsep/io.hpp"
#include "cgmmsep/log.hpp"
#include "cgmmsep/metrics.hpp"
#include "cgmmsep/network.hpp"
#include "cgmmsep/signal.hpp"
#include "cgmmsep/simulate.hpp"
#include "cgmmsep/spatial.hpp"

namespace cgmm {

namespace fs = std::filesystem;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNumeric:
    case ErrorKind::kDegenerateInput:
    case ErrorKind::kSingularDistance:
      return 2;
    case ErrorKind::kIo:
      return 3;
    case ErrorKind::kInvalidConfig:
    case ErrorKind::kConfigMismatch:
    case ErrorKind::kDimension:
    case ErrorKind::kCheckpoint:
    case ErrorKind::kInputTooShort:
    case ErrorKind::kInvalidReference:
      return 1;
  }
  return 1;
}

namespace {

// --- small helpers -----------------------------------------------------------

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  return out;
}

std::string format_number(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string join(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ';';
    out += format_number(values[i]);
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (s.back() == sep) out.emplace_back();
  return out;
}

// RFC 4180 style: fields may be quoted, quotes doubled inside.
std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Runs body(i) for i < n on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t j = 0; j < jobs; ++j) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

Waveform mono(const std::vector<double>& samples, int sample_rate) {
  Waveform w(1, samples.size(), sample_rate);
  std::copy(samples.begin(), samples.end(), w.samples.begin());
  return w;
}

std::vector<double> first_channel(const Waveform& w) {
  const auto ch = w.channel(0);
  return {ch.begin(), ch.end()};
}

void check_sample_rate(const Waveform& w, int expected, const fs::path& path) {
  if (w.sample_rate != expected) {
    throw Error(ErrorKind::kConfigMismatch, path.string() + " has sample rate " + std::to_string(w.sample_rate) +
                                                ", expected " + std::to_string(expected));
  }
}

void write_sources(const Spectrogram& x, const MaskPosterior& ez, std::size_t reference_channel,
                   const StftConfig& stft_cfg, std::size_t length, const fs::path& out_dir) {
  const auto outputs = apply_masks(x, ez, reference_channel);
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const Waveform y = istft(outputs[k], stft_cfg, length);
    write_wav(out_dir / ("source_" + std::to_string(k) + ".wav"), y);
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<double> doa_estimates(const DoaPosterior& ew, const DirectionGrid& grid) {
  std::vector<double> az(ew.sources);
  for (std::size_t k = 0; k < ew.sources; ++k) az[k] = grid.azimuth(ew.argmax(k));
  return az;
}

void check_checkpoint_stft(const Checkpoint& ck, const Config& cfg) {
  const auto stft_cfg = cfg.stft_config();
  if (ck.stft.window_len != stft_cfg.window_len || ck.stft.hop != stft_cfg.hop ||
      ck.stft.window != stft_cfg.window || ck.sample_rate != cfg.stft.sample_rate) {
    throw Error(ErrorKind::kCheckpoint, "checkpoint STFT (" + ck.topology() + ") differs from the configuration");
  }
}

}  // namespace

// --- manifest ------------------------------------------------------------------

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = parse_csv_line(line);
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_path = column("path");
  if (!c_path) throw Error(ErrorKind::kInvalidConfig, path.string() + ": manifest needs a 'path' column");
  const auto c_id = column("scene_id");
  const auto c_refs = column("references");
  const auto c_az = column("azimuths_deg");
  const auto c_seed = column("seed");
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  std::vector<ManifestEntry> entries;
  for (std::size_t number = 2; std::getline(in, line); ++number) {
    if (line.empty() || line == "\r") continue;
    const auto fields = parse_csv_line(line);
    const auto get = [&](std::optional<std::size_t> c) -> std::string {
      return c && *c < fields.size() ? fields[*c] : std::string();
    };
    const std::string where = path.string() + ":" + std::to_string(number);
    ManifestEntry e;
    if (get(c_path).empty()) throw Error(ErrorKind::kInvalidConfig, where + ": empty path");
    e.path = resolve(get(c_path));
    e.scene_id = get(c_id).empty() ? e.path.stem().string() : get(c_id);
    for (const auto& r : split(get(c_refs), ';')) {
      if (!r.empty()) e.references.push_back(resolve(r));
    }
    for (const auto& a : split(get(c_az), ';')) {
      try {
        std::size_t used = 0;
        e.azimuths_deg.push_back(std::stod(a, &used));
        if (used != a.size()) throw std::invalid_argument(a);
      } catch (const std::exception&) {
        throw Error(ErrorKind::kInvalidConfig, where + ": bad azimuth '" + a + "'");
      }
    }
    if (!get(c_seed).empty()) {
      try {
        e.seed = std::stoull(get(c_seed));
      } catch (const std::exception&) {
        throw Error(ErrorKind::kInvalidConfig, where + ": bad seed '" + get(c_seed) + "'");
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  auto out = open_out(path);
  out << "scene_id,path,references,azimuths_deg,seed\n";
  for (const auto& e : entries) {
    std::string refs;
    for (std::size_t k = 0; k < e.references.size(); ++k) {
      if (k) refs += ';';
      refs += e.references[k].generic_string();
    }
    out << csv_field(e.scene_id) << ',' << csv_field(e.path.generic_string()) << ',' << csv_field(refs) << ','
        << join(e.azimuths_deg) << ',' << (e.seed ? std::to_string(*e.seed) : "") << '\n';
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

// --- simulate ------------------------------------------------------------------

std::vector<ManifestEntry> cmd_simulate(const Config& cfg, const fs::path& out_dir, std::size_t jobs) {
  cfg.validate();
  make_dirs(out_dir);
  const auto sampler = cfg.scene_sampler();
  const auto geom = cfg.array_geometry();
  const auto stft_cfg = cfg.stft_config();
  std::vector<ManifestEntry> entries(cfg.simulate.scenes);

  parallel_for(entries.size(), jobs, [&](std::size_t i) {
    const std::uint64_t seed = cfg.simulate.seed + i;
    Scene scene = sample_scene(sampler, geom, seed);
    scene.reference_channel = cfg.em.reference_channel;
    const auto sim = scene.room ? mix_reverberant(scene, stft_cfg) : mix_planewave(scene, stft_cfg);

    char id[32];
    std::snprintf(id, sizeof(id), "scene_%04zu", i);
    const fs::path rel(id);
    make_dirs(out_dir / rel);
    ManifestEntry e;
    e.scene_id = id;
    e.path = rel / "mixture.wav";
    write_wav(out_dir / e.path, sim.mixture);
    for (std::size_t k = 0; k < sim.truth.reference_images.size(); ++k) {
      const fs::path ref = rel / ("ref_" + std::to_string(k) + ".wav");
      write_wav(out_dir / ref, mono(sim.truth.reference_images[k], sim.mixture.sample_rate));
      e.references.push_back(ref);
    }
    e.azimuths_deg = sim.truth.azimuths_deg;
    e.seed = seed;
    entries[i] = std::move(e);
    logger().info("simulated {} (seed {})", id, seed);
  });

  write_manifest(out_dir / "manifest.csv", entries);
  for (auto& e : entries) {
    e.path = out_dir / e.path;
    for (auto& r : e.references) r = out_dir / r;
  }
  return entries;
}

// --- separate ------------------------------------------------------------------

SeparationOutput separate_waveform(const Config& cfg, const Waveform& w, const SeparateOptions& opts) {
  cfg.validate();
  w.validate();
  if (w.sample_rate != cfg.stft.sample_rate) {
    throw Error(ErrorKind::kConfigMismatch, "mixture sample rate " + std::to_string(w.sample_rate) +
                                                " differs from stft.sample_rate " +
                                                std::to_string(cfg.stft.sample_rate));
  }
  const auto geom = cfg.array_geometry();
  if (w.channels != geom.num_mics()) {
    throw Error(ErrorKind::kConfigMismatch, "mixture has " + std::to_string(w.channels) +
                                                " channels but the geometry has " +
                                                std::to_string(geom.num_mics()) + " microphones");
  }
  if (w.channels < 2) throw Error(ErrorKind::kConfigMismatch, "EM separation needs at least 2 channels");

  // Load the checkpoint before any heavy work so a bad path fails fast.
  std::optional<Model> model;
  if (opts.init == SeparateOptions::Init::kNetwork) {
    const Checkpoint ck = load_checkpoint(opts.checkpoint);
    check_checkpoint_stft(ck, cfg);
    model = instantiate(ck);
    if (model->mask->sources() != cfg.em.sources) {
      throw Error(ErrorKind::kCheckpoint, "checkpoint network has " + std::to_string(model->mask->sources()) +
                                              " sources, configuration asks for " +
                                              std::to_string(cfg.em.sources));
    }
  }

  const auto stft_cfg = cfg.stft_config();
  const Spectrogram x = stft(w, stft_cfg);
  const auto grid = cfg.direction_grid();
  const auto hyper = cfg.hyperparams();
  const auto tpl = build_templates(geom, grid, x.bins, cfg.stft.sample_rate, hyper.epsilon);
  const auto em_cfg = cfg.em_config();

  SeparationOutput out;
  SeparationResult res;
  if (model) {
    res = run_em(x, tpl, em_cfg, hyper, EmInit::external_masks(network_masks(*model->mask, x, 0)));
    out.ez = res.ez;
    out.ew = res.ew;
  } else {
    res = run_em(x, tpl, em_cfg, hyper, EmInit::directional(cfg.em.init_classes));
    if (cfg.em.init_classes > cfg.em.sources) {
      auto merged = merge_classes(x, res.ez, res.ew, grid, cfg.em.sources, cfg.em.reference_channel);
      out.ez = std::move(merged.ez);
      out.ew = std::move(merged.ew);
    } else {
      out.ez = res.ez;
      out.ew = res.ew;
    }
  }
  for (const auto& y : apply_masks(x, out.ez, cfg.em.reference_channel)) {
    out.sources.push_back(istft(y, stft_cfg, w.length));
  }
  out.report.sources = out.ez.sources;
  out.report.azimuths_deg = doa_estimates(out.ew, grid);
  out.report.elbo_trace = std::move(res.elbo_trace);
  out.report.objective_trace = std::move(res.objective_trace);
  out.em_classes = res.ez.sources;
  out.diagnostics = res.diagnostics;
  return out;
}

SeparateReport cmd_separate(const Config& cfg, const fs::path& wav_in, const fs::path& out_dir,
                            const SeparateOptions& opts) {
  const Waveform w = read_wav(wav_in);
  SeparationOutput sep;
  try {
    sep = separate_waveform(cfg, w, opts);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kConfigMismatch) throw;
    throw Error(e.kind(), wav_in.string() + ": " + e.what());
  }
  const auto& report = sep.report;

  make_dirs(out_dir);
  for (std::size_t k = 0; k < sep.sources.size(); ++k) {
    write_wav(out_dir / ("source_" + std::to_string(k) + ".wav"), sep.sources[k]);
  }
  write_tensor(out_dir / "masks.cgtn", to_tensor(sep.ez));
  write_tensor(out_dir / "doa.cgtn", to_tensor(sep.ew));
  {
    auto out = open_out(out_dir / "elbo.csv");
    out << "iteration,elbo,objective\n";
    char buf[96];
    for (std::size_t i = 0; i < report.elbo_trace.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i + 1, report.elbo_trace[i], report.objective_trace[i]);
      out << buf;
    }
    if (!out) throw Error(ErrorKind::kIo, "failed writing elbo.csv");
  }

  const bool network = opts.init == SeparateOptions::Init::kNetwork;
  nlohmann::json j;
  j["method"] = "em";
  j["init"] = network ? "network" : "directional";
  if (network) j["checkpoint"] = opts.checkpoint.generic_string();
  j["input"] = wav_in.generic_string();
  j["sources"] = report.sources;
  j["em_classes"] = sep.em_classes;
  j["iterations"] = report.elbo_trace.size();
  j["azimuths_deg"] = report.azimuths_deg;
  j["elbo_final"] = report.elbo_trace.empty() ? 0.0 : report.elbo_trace.back();
  j["objective_final"] = report.objective_trace.empty() ? 0.0 : report.objective_trace.back();
  j["prior_fallback_bins"] = sep.diagnostics.prior_fallback_bins;
  j["monotonicity_violations"] = sep.diagnostics.monotonicity_violations;
  write_json(out_dir / "run.json", j);
  return report;
}

void cmd_separate_manifest(const Config& cfg, const fs::path& manifest, const fs::path& out_dir,
                           const SeparateOptions& opts, std::size_t jobs) {
  const auto entries = read_manifest(manifest);
  make_dirs(out_dir);
  parallel_for(entries.size(), jobs, [&](std::size_t i) {
    cmd_separate(cfg, entries[i].path, out_dir / entries[i].scene_id, opts);
    logger().info("separated {}", entries[i].scene_id);
  });
}

// --- infer-mono ----------------------------------------------------------------

std::size_t cmd_infer_mono(const fs::path& checkpoint, const fs::path& wav_in, const fs::path& out_dir) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Model model = instantiate(ck);
  const Waveform w = read_wav(wav_in);
  check_sample_rate(w, ck.sample_rate, wav_in);
  // Only the first microphone is used.
  const Spectrogram x = stft(mono(first_channel(w), w.sample_rate), ck.stft);
  const MaskPosterior ez = network_masks(*model.mask, x, 0);
  ez.validate();

  make_dirs(out_dir);
  write_sources(x, ez, 0, ck.stft, w.length, out_dir);
  write_tensor(out_dir / "masks.cgtn", to_tensor(ez));
  nlohmann::json j;
  j["method"] = "infer-mono";
  j["init"] = "network";
  j["checkpoint"] = checkpoint.generic_string();
  j["input"] = wav_in.generic_string();
  j["sources"] = ez.sources;
  write_json(out_dir / "run.json", j);
  return ez.sources;
}

// --- train ---------------------------------------------------------------------

TrainReport cmd_train(const Config& cfg, const fs::path& manifest, const fs::path& out_checkpoint,
                      const fs::path& log_csv) {
  cfg.validate();
  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw Error(ErrorKind::kInvalidConfig, "manifest " + manifest.string() + " lists no mixtures");

  const auto geom = cfg.array_geometry();
  const auto grid = cfg.direction_grid();
  const auto stft_cfg = cfg.stft_config();
  const auto hyper = cfg.hyperparams();
  const auto tpl = build_templates(geom, grid, stft_cfg.bins(), cfg.stft.sample_rate, hyper.epsilon);

  TrainReport report;
  std::vector<TrainingExample> corpus;
  for (const auto& e : entries) {
    Waveform w;
    try {
      w = read_wav(e.path);
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::kIo) throw;
      logger().warn("skipping {}: {}", e.path.string(), err.what());
      ++report.skipped;
      continue;
    }
    check_sample_rate(w, cfg.stft.sample_rate, e.path);
    if (w.channels != geom.num_mics()) {
      throw Error(ErrorKind::kConfigMismatch, e.path.string() + " has " + std::to_string(w.channels) +
                                                  " channels, geometry has " + std::to_string(geom.num_mics()));
    }
    const Spectrogram x = stft(w, stft_cfg);
    if (!x.all_finite() || !(mean_power(x) > 0.0)) {
      logger().warn("skipping {}: non-finite or silent mixture", e.path.string());
      ++report.skipped;
      continue;
    }
    corpus.push_back(prepare_example(x, tpl, 0));
  }
  if (corpus.empty()) throw Error(ErrorKind::kIo, "every manifest entry was skipped");
  report.examples = corpus.size();

  const auto train_cfg = cfg.train_config();
  ReferenceMaskNet g(stft_cfg.bins(), cfg.em.sources, cfg.train.context, cfg.train.hidden, cfg.train.seed);
  AffineLocalizationMap h(grid.size(), cfg.train.initial_log_temperature);
  Trainer trainer(g, h, train_cfg);

  if (!out_checkpoint.parent_path().empty()) make_dirs(out_checkpoint.parent_path());
  if (!log_csv.parent_path().empty()) make_dirs(log_csv.parent_path());
  auto log = open_out(log_csv);
  log << "epoch,step,loss,lr,gradnorm\n";
  char buf[128];
  for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    auto summary = trainer.run_epoch(corpus);
    for (std::size_t s = 0; s < summary.steps.size(); ++s) {
      const auto& st = summary.steps[s];
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g\n", summary.epoch, s,
                    st.skipped ? std::nan("") : st.loss, summary.learning_rate, st.grad_norm);
      log << buf;
    }
    log.flush();
    if (!log) throw Error(ErrorKind::kIo, "failed writing " + log_csv.string());

    Checkpoint ck = make_checkpoint(g, h, stft_cfg, cfg.stft.sample_rate);
    ck.mask_adam = trainer.mask_state();
    ck.loc_adam = trainer.loc_state();
    ck.learning_rate = trainer.learning_rate();
    ck.epoch = trainer.epoch();
    ck.last_epoch_loss = trainer.last_epoch_loss();
    // Write then rename so an interrupted run never leaves a torn checkpoint.
    const fs::path tmp = out_checkpoint.string() + ".tmp";
    save_checkpoint(tmp, ck);
    std::error_code ec;
    fs::rename(tmp, out_checkpoint, ec);
    if (ec) throw Error(ErrorKind::kIo, "cannot move checkpoint to " + out_checkpoint.string() + ": " + ec.message());
    report.epochs.push_back(std::move(summary));
  }
  return report;
}

// --- evaluate ------------------------------------------------------------------

namespace {

struct EvalRow {
  std::string scene_id;
  std::string method;
  std::string init;
  std::string status = "ok";
  std::vector<double> per_source;
  double mean = std::nan("");
  std::vector<double> doa_errors;
  double elbo_final = std::nan("");
};

EvalRow evaluate_scene(const ManifestEntry& e, const DirectionGrid& grid, const fs::path& dir) {
  EvalRow row;
  row.scene_id = e.scene_id;
  if (fs::exists(dir / "run.json")) {
    std::ifstream in(dir / "run.json");
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (!j.is_discarded()) {
      row.method = j.value("method", "");
      row.init = j.value("init", "");
      if (j.contains("elbo_final") && j["elbo_final"].is_number()) row.elbo_final = j["elbo_final"].get<double>();
    }
  }
  if (e.references.empty()) {
    row.status = "no_references";
    return row;
  }
  std::vector<std::vector<double>> refs, ests;
  for (const auto& r : e.references) refs.push_back(first_channel(read_wav(r)));
  for (std::size_t k = 0; fs::exists(dir / ("source_" + std::to_string(k) + ".wav")); ++k) {
    ests.push_back(first_channel(read_wav(dir / ("source_" + std::to_string(k) + ".wav"))));
  }
  if (ests.empty()) {
    row.status = "missing_estimate";
    return row;
  }
  if (ests.size() != refs.size()) {
    row.status = "source_count_mismatch";
    return row;
  }
  const auto align = permutation_align(ests, refs);
  row.per_source = align.si_sdr;
  row.mean = align.mean;
  if (fs::exists(dir / "doa.cgtn") && e.azimuths_deg.size() == refs.size()) {
    const auto ew = doa_from_tensor(read_tensor(dir / "doa.cgtn"));
    row.doa_errors = doa_error(ew, grid, e.azimuths_deg, align.permutation);
  }
  return row;
}

}  // namespace

EvaluateReport cmd_evaluate(const Config& cfg, const fs::path& manifest, const fs::path& results_dir,
                            const fs::path& out_csv, std::size_t jobs) {
  const auto entries = read_manifest(manifest);
  const auto grid = cfg.direction_grid();
  std::vector<EvalRow> rows(entries.size());
  parallel_for(entries.size(), jobs, [&](std::size_t i) {
    try {
      rows[i] = evaluate_scene(entries[i], grid, results_dir / entries[i].scene_id);
    } catch (const Error& err) {
      logger().warn("scene {}: {}", entries[i].scene_id, err.what());
      rows[i] = EvalRow{};
      rows[i].scene_id = entries[i].scene_id;
      rows[i].status = "error";
    }
  });

  EvaluateReport report;
  report.scenes = rows.size();
  std::vector<double> means, doas;
  for (const auto& r : rows) {
    if (r.status != "ok") {
      ++report.failures;
      continue;
    }
    means.push_back(r.mean);
    doas.insert(doas.end(), r.doa_errors.begin(), r.doa_errors.end());
  }
  auto stats = [](const std::vector<double>& v) -> std::pair<double, double> {
    if (v.empty()) return {std::nan(""), std::nan("")};
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size()))};
  };
  const auto [mean_sdr, std_sdr] = stats(means);
  const auto [mean_doa, std_doa] = stats(doas);
  report.mean_si_sdr = mean_sdr;
  report.std_si_sdr = std_sdr;

  if (!out_csv.parent_path().empty()) make_dirs(out_csv.parent_path());
  auto out = open_out(out_csv);
  out << "scene_id,method,init,status,per_source_si_sdr,mean_si_sdr,doa_errors,elbo_final\n";
  for (const auto& r : rows) {
    out << csv_field(r.scene_id) << ',' << csv_field(r.method) << ',' << csv_field(r.init) << ',' << r.status << ','
        << join(r.per_source) << ',' << format_number(r.mean) << ',' << join(r.doa_errors) << ','
        << format_number(r.elbo_final) << '\n';
  }
  out << "mean,,,aggregate,," << format_number(mean_sdr) << ',' << format_number(mean_doa) << ",\n";
  out << "std,,,aggregate,," << format_number(std_sdr) << ',' << format_number(std_doa) << ",\n";
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + out_csv.string());
  return report;
}

// --- gradcheck -----------------------------------------------------------------

GradcheckSuite cmd_gradcheck(const Config& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  constexpr std::size_t kFrames = 8, kBins = 8, kDirections = 8;
  const std::uint64_t seed = cfg.train.seed;
  const auto ex = gradcheck_instance(kFrames, kBins, kDirections, seed);
  const AffineLocalizationMap h(kDirections, cfg.train.initial_log_temperature);

  GradcheckSuite suite;
  const ReferenceMaskNet ref(kBins, cfg.em.sources, cfg.train.context, 16, seed);
  suite.reference = gradcheck(ref, h, ex);
  const LinearMaskNet lin(kBins, cfg.em.sources, seed);
  suite.linear = gradcheck(lin, h, ex);
  suite.passed = suite.reference.passed && suite.linear.passed;
  suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return suite;
}

}  // namespace cgmm
