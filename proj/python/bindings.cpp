#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cgmmsep/checkpoint.hpp"
#include "cgmmsep/commands.hpp"
#include "cgmmsep/config.hpp"
#include "cgmmsep/error.hpp"
#include "cgmmsep/metrics.hpp"
#include "cgmmsep/signal.hpp"
#include "cgmmsep/simulate.hpp"
#include "cgmmsep/training.hpp"

namespace py = pybind11;
using namespace cgmm;

namespace {

using RealArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ComplexArray = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;

// Accepts (channels, samples) or a 1-D mono signal.
Waveform to_waveform(const RealArray& a, int sample_rate) {
  if (a.ndim() != 1 && a.ndim() != 2) throw Error(ErrorKind::kDimension, "signal must be 1-D or (channels, samples)");
  const std::size_t channels = a.ndim() == 1 ? 1 : static_cast<std::size_t>(a.shape(0));
  const std::size_t length = static_cast<std::size_t>(a.shape(a.ndim() - 1));
  Waveform w(channels, length, sample_rate);
  std::copy(a.data(), a.data() + channels * length, w.samples.begin());
  return w;
}

RealArray to_array(const std::vector<Waveform>& ws) {
  const std::size_t length = ws.empty() ? 0 : ws.front().length;
  RealArray out({ws.size(), length});
  auto* dst = out.mutable_data();
  for (std::size_t k = 0; k < ws.size(); ++k) std::copy(ws[k].samples.begin(), ws[k].samples.begin() + length, dst + k * length);
  return out;
}

RealArray to_array(const MaskPosterior& z) {
  RealArray out({z.frames, z.bins, z.sources});
  std::copy(z.values.begin(), z.values.end(), out.mutable_data());
  return out;
}

RealArray to_array(const DoaPosterior& w) {
  RealArray out({w.sources, w.directions});
  std::copy(w.values.begin(), w.values.end(), out.mutable_data());
  return out;
}

std::vector<std::vector<double>> rows(const RealArray& a) {
  if (a.ndim() != 2) throw Error(ErrorKind::kDimension, "expected a (sources, samples) array");
  const auto n = static_cast<std::size_t>(a.shape(0)), len = static_cast<std::size_t>(a.shape(1));
  std::vector<std::vector<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k].assign(a.data() + k * len, a.data() + (k + 1) * len);
  return out;
}

StftConfig make_stft(int window_len, int hop, const std::string& window) {
  StftConfig c;
  c.window_len = window_len;
  c.hop = hop;
  if (window == "hann") {
    c.window = WindowType::kHann;
  } else if (window == "rectangular") {
    c.window = WindowType::kRectangular;
  } else {
    throw Error(ErrorKind::kInvalidConfig, "window must be 'hann' or 'rectangular'");
  }
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core bindings of the cgmmsep separation toolkit";

  // Raised as cgmmsep.Error with `kind` and `exit_code` attributes.
  static py::handle error_type = py::exception<Error>(m, "Error", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type)(e.what());
      exc.attr("kind") = to_string(e.kind());
      exc.attr("exit_code") = exit_code(e.kind());
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::class_<Config>(m, "Config")
      .def(py::init<>())
      .def_static("parse", &parse_config, py::arg("text"), py::arg("origin") = "<config>")
      .def_static("load", [](const std::string& path) { return load_config(path); }, py::arg("path"))
      .def("serialize", &serialize_config)
      .def("set", [](Config& c, const std::string& a) { apply_override(c, a); return c; }, py::arg("assignment"),
           "Apply a section.key=value override in place and return the config.")
      .def("validate", &Config::validate)
      .def_property_readonly("sample_rate", [](const Config& c) { return c.stft.sample_rate; })
      .def_property_readonly("mics", [](const Config& c) { return c.geometry.mics; })
      .def_property_readonly("sources", [](const Config& c) { return c.em.sources; })
      .def_property_readonly("directions", [](const Config& c) { return c.grid.directions; })
      .def("__eq__", [](const Config& a, const Config& b) { return a == b; })
      .def("__repr__", [](const Config& c) { return "<cgmmsep.Config\n" + serialize_config(c) + ">"; });

  m.def(
      "simulate",
      [](const Config& cfg, std::uint64_t seed) {
        cfg.validate();
        Scene scene = sample_scene(cfg.scene_sampler(), cfg.array_geometry(), seed);
        scene.reference_channel = cfg.em.reference_channel;
        const auto stft_cfg = cfg.stft_config();
        const auto sim = scene.room ? mix_reverberant(scene, stft_cfg) : mix_planewave(scene, stft_cfg);
        RealArray refs({sim.truth.reference_images.size(), sim.mixture.length});
        for (std::size_t k = 0; k < sim.truth.reference_images.size(); ++k) {
          std::copy(sim.truth.reference_images[k].begin(), sim.truth.reference_images[k].end(),
                    refs.mutable_data() + k * sim.mixture.length);
        }
        py::dict d;
        RealArray mix({sim.mixture.channels, sim.mixture.length});
        std::copy(sim.mixture.samples.begin(), sim.mixture.samples.end(), mix.mutable_data());
        d["mixture"] = mix;
        d["references"] = refs;
        d["azimuths_deg"] = sim.truth.azimuths_deg;
        d["oracle_masks"] = to_array(sim.truth.oracle_masks);
        d["sample_rate"] = sim.mixture.sample_rate;
        return d;
      },
      py::arg("config"), py::arg("seed"), "Draw and mix one scene; returns mixture, references and truths.");

  m.def(
      "separate",
      [](const Config& cfg, const RealArray& mixture, const std::optional<std::string>& checkpoint) {
        SeparateOptions opts;
        if (checkpoint) {
          opts.init = SeparateOptions::Init::kNetwork;
          opts.checkpoint = *checkpoint;
        }
        SeparationOutput out;
        {
          const Waveform w = to_waveform(mixture, cfg.stft.sample_rate);
          py::gil_scoped_release release;
          out = separate_waveform(cfg, w, opts);
        }
        py::dict d;
        d["sources"] = to_array(out.sources);
        d["masks"] = to_array(out.ez);
        d["doa"] = to_array(out.ew);
        d["azimuths_deg"] = out.report.azimuths_deg;
        d["elbo_trace"] = out.report.elbo_trace;
        d["objective_trace"] = out.report.objective_trace;
        return d;
      },
      py::arg("config"), py::arg("mixture"), py::arg("checkpoint") = py::none(),
      "EM separation of a (mics, samples) mixture; directional init unless a checkpoint is given.");

  m.def(
      "infer_mono",
      [](const std::string& checkpoint, const RealArray& signal, int sample_rate) {
        const Checkpoint ck = load_checkpoint(checkpoint);
        const Model model = instantiate(ck);
        if (sample_rate != ck.sample_rate) throw Error(ErrorKind::kConfigMismatch, "sample rate differs from checkpoint");
        Waveform w = to_waveform(signal, sample_rate);
        Waveform first(1, w.length, sample_rate);
        std::copy(w.samples.begin(), w.samples.begin() + static_cast<std::ptrdiff_t>(w.length), first.samples.begin());
        const Spectrogram x = stft(first, ck.stft);
        const MaskPosterior ez = network_masks(*model.mask, x, 0);
        std::vector<Waveform> sources;
        for (const auto& y : apply_masks(x, ez, 0)) sources.push_back(istft(y, ck.stft, w.length));
        py::dict d;
        d["sources"] = to_array(sources);
        d["masks"] = to_array(ez);
        return d;
      },
      py::arg("checkpoint"), py::arg("signal"), py::arg("sample_rate"),
      "Mask-network separation of the first channel only.");

  m.def(
      "stft",
      [](const RealArray& signal, int sample_rate, int window_len, int hop, const std::string& window) {
        const Spectrogram s = stft(to_waveform(signal, sample_rate), make_stft(window_len, hop, window));
        ComplexArray out({s.frames, s.bins, s.channels});
        std::copy(s.values.begin(), s.values.end(), out.mutable_data());
        return out;
      },
      py::arg("signal"), py::arg("sample_rate"), py::arg("window_len") = 512, py::arg("hop") = 128,
      py::arg("window") = "hann", "Returns a (frames, bins, channels) complex array.");

  m.def(
      "istft",
      [](const ComplexArray& spec, int sample_rate, int window_len, int hop, const std::string& window,
         std::size_t length) {
        if (spec.ndim() != 3) throw Error(ErrorKind::kDimension, "expected (frames, bins, channels)");
        const auto cfg = make_stft(window_len, hop, window);
        Spectrogram s(static_cast<std::size_t>(spec.shape(0)), static_cast<std::size_t>(spec.shape(1)),
                      static_cast<std::size_t>(spec.shape(2)), hop, window_len, sample_rate);
        if (s.bins != cfg.bins()) throw Error(ErrorKind::kDimension, "bin count does not match window_len");
        std::copy(spec.data(), spec.data() + s.values.size(), s.values.begin());
        const Waveform w = istft(s, cfg, length);
        RealArray out({w.channels, w.length});
        std::copy(w.samples.begin(), w.samples.end(), out.mutable_data());
        return out;
      },
      py::arg("spec"), py::arg("sample_rate"), py::arg("window_len") = 512, py::arg("hop") = 128,
      py::arg("window") = "hann", py::arg("length") = 0);

  m.def(
      "si_sdr",
      [](const RealArray& estimate, const RealArray& reference) {
        return si_sdr({estimate.data(), static_cast<std::size_t>(estimate.size())},
                      {reference.data(), static_cast<std::size_t>(reference.size())});
      },
      py::arg("estimate"), py::arg("reference"), "Scale-invariant SDR in dB.");

  m.def(
      "permutation_align",
      [](const RealArray& estimates, const RealArray& references) {
        const auto a = permutation_align(rows(estimates), rows(references));
        py::dict d;
        d["permutation"] = a.permutation;
        d["si_sdr"] = a.si_sdr;
        d["mean"] = a.mean;
        return d;
      },
      py::arg("estimates"), py::arg("references"));

  m.def(
      "gradcheck",
      [](const Config& cfg) {
        const auto suite = cmd_gradcheck(cfg);
        auto report = [](const GradcheckReport& r) {
          py::dict d;
          d["max_rel_error"] = r.max_rel_error;
          d["max_rel_error_mask"] = r.max_rel_error_mask;
          d["max_rel_error_loc"] = r.max_rel_error_loc;
          d["checked"] = r.checked;
          d["passed"] = r.passed;
          return d;
        };
        py::dict d;
        d["reference"] = report(suite.reference);
        d["linear"] = report(suite.linear);
        d["passed"] = suite.passed;
        d["seconds"] = suite.seconds;
        return d;
      },
      py::arg("config") = Config{});
}
