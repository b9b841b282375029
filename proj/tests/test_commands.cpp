#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "cgmmsep/checkpoint.hpp"
#include "cgmmsep/commands.hpp"
#include "cgmmsep/io.hpp"
#include "helpers.hpp"

using namespace cgmm;
namespace fs = std::filesystem;

namespace {

Config small_config() {
  Config cfg;
  cfg.simulate.scenes = 2;
  cfg.simulate.duration_s = 1.0;
  cfg.simulate.seed = 42;
  cfg.em.iterations = 4;
  cfg.train.hidden = 8;
  cfg.train.context = 1;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 2;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<double> csv_numbers(const std::string& line) {
  std::vector<double> v;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) v.push_back(std::stod(cell));
  return v;
}

ErrorKind error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kNumeric;
}

}  // namespace

TEST_SUITE("commands") {
  TEST_CASE("exit codes group the error kinds") {
    CHECK(exit_code(ErrorKind::kInvalidConfig) == 1);
    CHECK(exit_code(ErrorKind::kConfigMismatch) == 1);
    CHECK(exit_code(ErrorKind::kCheckpoint) == 1);
    CHECK(exit_code(ErrorKind::kNumeric) == 2);
    CHECK(exit_code(ErrorKind::kDegenerateInput) == 2);
    CHECK(exit_code(ErrorKind::kIo) == 3);
  }

  TEST_CASE("simulate is reproducible and writes a manifest") {
    const auto dir = testutil::scratch_dir("cmd_simulate");
    const auto cfg = small_config();
    const auto a = cmd_simulate(cfg, dir / "a");
    cmd_simulate(cfg, dir / "b", 2);
    REQUIRE(a.size() == 2);
    for (const char* f : {"scene_0000/mixture.wav", "scene_0001/mixture.wav", "scene_0001/ref_1.wav"}) {
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    const auto m = read_manifest(dir / "a" / "manifest.csv");
    REQUIRE(m.size() == 2);
    CHECK(m[1].scene_id == "scene_0001");
    CHECK(m[1].seed == 43);
    CHECK(m[0].references.size() == 2);
    CHECK(m[0].azimuths_deg == a[0].azimuths_deg);
    CHECK(fs::equivalent(m[0].path, dir / "a" / "scene_0000" / "mixture.wav"));
    const auto w = read_wav(m[0].path);
    CHECK(w.channels == 4);
    CHECK(w.length == 8000);

    auto none = cfg;
    none.simulate.scenes = 0;
    CHECK(cmd_simulate(none, dir / "c").empty());
    CHECK(read_manifest(dir / "c" / "manifest.csv").empty());
  }

  TEST_CASE("manifests round-trip and need a path column") {
    const auto dir = testutil::scratch_dir("cmd_manifest");
    std::vector<ManifestEntry> entries(1);
    entries[0].scene_id = "s,1";
    entries[0].path = dir / "m.wav";
    entries[0].references = {dir / "r0.wav", dir / "r1.wav"};
    entries[0].azimuths_deg = {10.5, 200.0};
    write_manifest(dir / "m.csv", entries);
    const auto back = read_manifest(dir / "m.csv");
    REQUIRE(back.size() == 1);
    CHECK(back[0].scene_id == "s,1");
    CHECK(back[0].references.size() == 2);
    CHECK(back[0].azimuths_deg[0] == 10.5);
    CHECK_FALSE(back[0].seed.has_value());
    std::ofstream(dir / "bad.csv") << "scene_id,file\na,b.wav\n";
    CHECK(error_of([&] { read_manifest(dir / "bad.csv"); }) == ErrorKind::kInvalidConfig);
    CHECK(error_of([&] { read_manifest(dir / "absent.csv"); }) == ErrorKind::kIo);
  }

  TEST_CASE("separate writes sources, posteriors and a monotone objective") {
    const auto dir = testutil::scratch_dir("cmd_separate");
    const auto cfg = small_config();
    const auto m = cmd_simulate(cfg, dir / "data");
    const auto rep = cmd_separate(cfg, m[0].path, dir / "out", {});
    CHECK(rep.sources == 2);
    CHECK(rep.azimuths_deg.size() == 2);
    for (int k = 0; k < 2; ++k) {
      const auto w = read_wav(dir / "out" / ("source_" + std::to_string(k) + ".wav"));
      CHECK(w.channels == 1);
      CHECK(w.length == 8000);
    }
    const auto ez = mask_from_tensor(read_tensor(dir / "out" / "masks.cgtn"));
    ez.validate();
    CHECK(ez.sources == 2);
    doa_from_tensor(read_tensor(dir / "out" / "doa.cgtn")).validate();
    const auto rows = lines(dir / "out" / "elbo.csv");
    REQUIRE(rows.size() == 5);
    CHECK(rows[0] == "iteration,elbo,objective");
    for (std::size_t i = 2; i < rows.size(); ++i) {
      CHECK(csv_numbers(rows[i])[2] >= csv_numbers(rows[i - 1])[2] - 1e-6 * std::abs(csv_numbers(rows[i - 1])[2]));
    }
    const auto json = slurp(dir / "out" / "run.json");
    CHECK(json.find("\"init\": \"directional\"") != std::string::npos);

    SeparateOptions net;
    net.init = SeparateOptions::Init::kNetwork;
    net.checkpoint = dir / "absent.cgck";
    CHECK(error_of([&] { cmd_separate(cfg, m[0].path, dir / "out2", net); }) == ErrorKind::kIo);
    auto three = cfg;
    three.geometry.mics = 3;
    CHECK(error_of([&] { cmd_separate(three, m[0].path, dir / "out3", {}); }) == ErrorKind::kConfigMismatch);
  }

  TEST_CASE("training at zero learning rate keeps the initial weights") {
    const auto dir = testutil::scratch_dir("cmd_train");
    auto cfg = small_config();
    cfg.train.learning_rate = 0.0;
    cmd_simulate(cfg, dir / "data");
    const auto rep = cmd_train(cfg, dir / "data" / "manifest.csv", dir / "m.cgck", dir / "log.csv");
    CHECK(rep.examples == 2);
    CHECK(rep.epochs.size() == 1);
    const auto ck = load_checkpoint(dir / "m.cgck");
    const ReferenceMaskNet init(257, 2, 1, 8, cfg.train.seed);
    CHECK(ck.mask_params == init.parameters());
    CHECK(ck.epoch == 1);
    const auto log = lines(dir / "log.csv");
    CHECK(log[0] == "epoch,step,loss,lr,gradnorm");
    CHECK(log.size() == 2);

    // Network inference uses the first channel only.
    const auto mix = read_wav(dir / "data" / "scene_0000" / "mixture.wav");
    auto altered = mix;
    for (std::size_t c = 1; c < 4; ++c) {
      for (auto& s : altered.channel(c)) s *= -0.5;
    }
    write_wav(dir / "altered.wav", altered);
    CHECK(cmd_infer_mono(dir / "m.cgck", dir / "data" / "scene_0000" / "mixture.wav", dir / "mono_a") == 2);
    cmd_infer_mono(dir / "m.cgck", dir / "altered.wav", dir / "mono_b");
    CHECK(slurp(dir / "mono_a" / "masks.cgtn") == slurp(dir / "mono_b" / "masks.cgtn"));
    mask_from_tensor(read_tensor(dir / "mono_a" / "masks.cgtn")).validate();
  }

  TEST_CASE("training is reproducible and skips unreadable mixtures") {
    const auto dir = testutil::scratch_dir("cmd_train_repro");
    auto cfg = small_config();
    cfg.train.learning_rate = 1e-2;
    cmd_simulate(cfg, dir / "data");
    cmd_train(cfg, dir / "data" / "manifest.csv", dir / "a.cgck", dir / "a.csv");
    cmd_train(cfg, dir / "data" / "manifest.csv", dir / "b.cgck", dir / "b.csv");
    CHECK(slurp(dir / "a.cgck") == slurp(dir / "b.cgck"));
    CHECK(load_checkpoint(dir / "a.cgck").mask_params != ReferenceMaskNet(257, 2, 1, 8, 0).parameters());

    std::ofstream(dir / "data" / "scene_0001" / "mixture.wav") << "not a wav";
    const auto rep = cmd_train(cfg, dir / "data" / "manifest.csv", dir / "c.cgck", dir / "c.csv");
    CHECK(rep.examples == 1);
    CHECK(rep.skipped == 1);
    std::ofstream(dir / "data" / "scene_0000" / "mixture.wav") << "not a wav";
    CHECK(error_of([&] { cmd_train(cfg, dir / "data" / "manifest.csv", dir / "d.cgck", dir / "d.csv"); }) ==
          ErrorKind::kIo);
  }

  TEST_CASE("evaluate scores estimates and reports missing ones") {
    const auto dir = testutil::scratch_dir("cmd_evaluate");
    const auto cfg = small_config();
    const auto m = cmd_simulate(cfg, dir / "data");
    // Perfect estimates for the first scene, nothing for the second.
    fs::create_directories(dir / "res" / "scene_0000");
    write_wav(dir / "res" / "scene_0000" / "source_0.wav", read_wav(m[0].references[1]));
    write_wav(dir / "res" / "scene_0000" / "source_1.wav", read_wav(m[0].references[0]));
    const auto rep = cmd_evaluate(cfg, dir / "data" / "manifest.csv", dir / "res", dir / "metrics.csv");
    CHECK(rep.scenes == 2);
    CHECK(rep.failures == 1);
    CHECK(rep.mean_si_sdr >= 50.0);
    const auto rows = lines(dir / "metrics.csv");
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].rfind("scene_id,method,init,status", 0) == 0);
    CHECK(rows[1].find(",ok,") != std::string::npos);
    CHECK(rows[2].find("missing_estimate") != std::string::npos);
    CHECK(rows[3].rfind("mean", 0) == 0);
    CHECK(rows[4].rfind("std", 0) == 0);
  }

  TEST_CASE("gradcheck command passes quickly") {
    const auto suite = cmd_gradcheck(Config{});
    CHECK(suite.passed);
    CHECK(suite.seconds < 30.0);
  }
}

#ifdef CGMMSEP_CLI
TEST_SUITE("cli") {
  TEST_CASE("exit codes follow the error classes") {
    const auto dir = testutil::scratch_dir("cli");
    const std::string cli = CGMMSEP_CLI;
    auto run = [&](const std::string& args) {
      const int status = std::system((cli + " " + args + " >" + (dir / "out.txt").string() + " 2>&1").c_str());
      return WEXITSTATUS(status);
    };
    std::ofstream(dir / "c.toml") << "[simulate]\nscenes = 1\nduration_s = 0.5\n[em]\niterations = 2\n";
    const std::string c = " --config " + (dir / "c.toml").string();
    CHECK(run("") == 1);
    CHECK(run("frobnicate") == 1);
    CHECK(run("simulate --set em.bogus=1 --out " + (dir / "x").string()) == 1);
    CHECK(run("simulate" + c + " --out " + (dir / "sim").string()) == 0);
    CHECK(fs::exists(dir / "sim" / "manifest.csv"));
    const std::string mix = (dir / "sim" / "scene_0000" / "mixture.wav").string();
    CHECK(run("separate" + c + " --input " + mix + " --out " + (dir / "sep").string()) == 0);
    CHECK(run("separate" + c + " --input " + (dir / "none.wav").string() + " --out " + (dir / "s2").string()) == 3);
    CHECK(run("separate" + c + " --set geometry.mics=2 --input " + mix + " --out " + (dir / "s3").string()) == 1);
    CHECK(run("separate" + c + " --init network --checkpoint " + (dir / "no.cgck").string() + " --input " + mix +
              " --out " + (dir / "s4").string()) == 3);
    std::ofstream(dir / "junk.cgck") << "junk";
    CHECK(run("infer-mono --checkpoint " + (dir / "junk.cgck").string() + " --input " + mix + " --out " +
              (dir / "s5").string()) == 1);
    CHECK(run("gradcheck") == 0);
  }
}
#endif
