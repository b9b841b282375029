#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cgmmsep/commands.hpp"
#include "cgmmsep/config.hpp"
#include "cgmmsep/error.hpp"
#include "cgmmsep/log.hpp"

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::vector<std::string> overrides;
};

// Config file first, then --set overrides, then --seed; flags win.
cgmm::Config resolve_config(const Globals& g) {
  cgmm::Config cfg = g.config_path.empty() ? cgmm::Config{} : cgmm::load_config(g.config_path);
  for (const auto& o : g.overrides) cgmm::apply_override(cfg, o);
  if (g.seed) {
    cfg.simulate.seed = *g.seed;
    cfg.train.seed = *g.seed;
  }
  cfg.validate();
  return cfg;
}

fs::path or_default(const std::string& flag, const std::string& fallback, const char* what) {
  const std::string value = flag.empty() ? fallback : flag;
  if (value.empty()) throw cgmm::Error(cgmm::ErrorKind::kInvalidConfig, std::string("no ") + what + " given");
  return value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multichannel blind source separation with a complex Gaussian mixture model"};
  app.require_subcommand(1);
  Globals g;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--config", g.config_path, "Configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", g.seed, "Seed for simulation and training");
    sub->add_option("--jobs", g.jobs, "Scenes processed in parallel")->check(CLI::PositiveNumber);
    sub->add_option("--set", g.overrides, "Override a config value, section.key=value");
  };

  std::string out_dir, input, manifest, checkpoint, log_path, results, output, init = "directional";

  auto* simulate = app.add_subcommand("simulate", "Write seeded scenes and a ground-truth manifest");
  add_globals(simulate);
  simulate->add_option("--out", out_dir, "Output directory (default paths.output_dir)");

  auto* separate = app.add_subcommand("separate", "Run EM separation on a mixture or a manifest");
  add_globals(separate);
  auto* sep_input = separate->add_option("--input", input, "Multichannel WAV");
  auto* sep_manifest = separate->add_option("--manifest", manifest, "Manifest of mixtures");
  sep_input->excludes(sep_manifest);
  separate->add_option("--out", out_dir, "Output directory (default paths.output_dir)");
  separate->add_option("--init", init, "Initialisation")->check(CLI::IsMember({"directional", "network"}));
  separate->add_option("--checkpoint", checkpoint, "Checkpoint for --init network (default paths.checkpoint)");

  auto* infer = app.add_subcommand("infer-mono", "Separate the first channel with the mask network only");
  add_globals(infer);
  infer->add_option("--input", input, "WAV file")->required();
  infer->add_option("--checkpoint", checkpoint, "Checkpoint (default paths.checkpoint)");
  infer->add_option("--out", out_dir, "Output directory (default paths.output_dir)");

  auto* train = app.add_subcommand("train", "Train the mask network and localization map");
  add_globals(train);
  train->add_option("--manifest", manifest, "Training manifest (default paths.manifest)");
  train->add_option("--checkpoint", checkpoint, "Output checkpoint (default paths.checkpoint)");
  train->add_option("--log", log_path, "Training log CSV (default paths.train_log)");

  auto* evaluate = app.add_subcommand("evaluate", "Score separated scenes against their references");
  add_globals(evaluate);
  evaluate->add_option("--manifest", manifest, "Manifest with references (default paths.manifest)");
  evaluate->add_option("--results", results, "Directory holding one folder per scene")->required();
  evaluate->add_option("--output", output, "Metrics CSV (default <results>/metrics.csv)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  add_globals(gradcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    cgmm::logger();
    const cgmm::Config cfg = resolve_config(g);

    if (*simulate) {
      const auto entries = cgmm::cmd_simulate(cfg, or_default(out_dir, cfg.paths.output_dir, "output directory"),
                                              g.jobs);
      std::printf("wrote %zu scenes\n", entries.size());
    } else if (*separate) {
      cgmm::SeparateOptions opts;
      if (init == "network") {
        opts.init = cgmm::SeparateOptions::Init::kNetwork;
        opts.checkpoint = or_default(checkpoint, cfg.paths.checkpoint, "checkpoint");
      }
      const fs::path out = or_default(out_dir, cfg.paths.output_dir, "output directory");
      if (!input.empty()) {
        const auto report = cgmm::cmd_separate(cfg, input, out, opts);
        std::printf("separated %zu sources, final ELBO %.6g\n", report.sources,
                    report.elbo_trace.empty() ? 0.0 : report.elbo_trace.back());
      } else {
        cgmm::cmd_separate_manifest(cfg, or_default(manifest, cfg.paths.manifest, "--input or manifest"), out, opts,
                                    g.jobs);
      }
    } else if (*infer) {
      const auto k = cgmm::cmd_infer_mono(or_default(checkpoint, cfg.paths.checkpoint, "checkpoint"), input,
                                          or_default(out_dir, cfg.paths.output_dir, "output directory"));
      std::printf("separated %zu sources\n", k);
    } else if (*train) {
      const fs::path ck = or_default(checkpoint, cfg.paths.checkpoint, "checkpoint");
      const fs::path log = log_path.empty() && cfg.paths.train_log.empty() ? fs::path(ck.string() + ".log.csv")
                                                                           : or_default(log_path, cfg.paths.train_log, "log");
      const auto report = cgmm::cmd_train(cfg, or_default(manifest, cfg.paths.manifest, "manifest"), ck, log);
      for (const auto& e : report.epochs) {
        std::printf("epoch %zu loss %.6f lr %.3g\n", e.epoch, e.mean_loss, e.learning_rate);
      }
      if (report.skipped > 0) std::printf("skipped %zu unreadable mixtures\n", report.skipped);
    } else if (*evaluate) {
      const fs::path csv = output.empty() ? fs::path(results) / "metrics.csv" : fs::path(output);
      const auto report = cgmm::cmd_evaluate(cfg, or_default(manifest, cfg.paths.manifest, "manifest"), results, csv,
                                             g.jobs);
      std::printf("scenes %zu, failures %zu, mean SI-SDR %.3f dB (std %.3f)\n", report.scenes, report.failures,
                  report.mean_si_sdr, report.std_si_sdr);
      if (report.failures > 0) return 3;
    } else if (*gradcheck) {
      const auto suite = cgmm::cmd_gradcheck(cfg);
      std::printf("ReferenceMaskNet: max rel error %.3e (mask %.3e, loc %.3e) %s\n", suite.reference.max_rel_error,
                  suite.reference.max_rel_error_mask, suite.reference.max_rel_error_loc,
                  suite.reference.passed ? "PASS" : "FAIL");
      std::printf("LinearMaskNet:    max rel error %.3e (mask %.3e, loc %.3e) %s\n", suite.linear.max_rel_error,
                  suite.linear.max_rel_error_mask, suite.linear.max_rel_error_loc,
                  suite.linear.passed ? "PASS" : "FAIL");
      std::printf("%.2f s\n", suite.seconds);
      return suite.passed ? 0 : 2;
    }
  } catch (const cgmm::Error& e) {
    cgmm::logger().error("{}", e.what());
    return cgmm::exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    cgmm::logger().error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    cgmm::logger().error("{}", e.what());
    return 2;
  }
  return 0;
}
