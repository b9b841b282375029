#include "cgmmsep/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "bytes.hpp"
#include "cgmmsep/error.hpp"

namespace cgmm {

namespace {

using detail::ByteReader;
using detail::ByteWriter;
using detail::dump;
using detail::slurp;

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw Error(ErrorKind::kDimension, std::string(what) + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  ByteReader r(slurp(path), path.string());
  if (r.tag(4) != "RIFF") r.fail("not a RIFF file");
  r.u32();
  if (r.tag(4) != "WAVE") r.fail("not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::string id = r.tag(4);
    const std::uint32_t size = r.u32();
    const std::size_t body = r.position();
    if (id == "fmt ") {
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      if (format == kFormatExtensible && size >= 40) {
        r.u16();  // cbSize
        r.u16();  // valid bits
        r.u32();  // channel mask
        format = r.u16();
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) r.fail("data chunk before fmt chunk");
      if (channels == 0 || rate == 0) r.fail("invalid fmt chunk");
      const bool pcm16 = format == kFormatPcm && bits == 16;
      const bool float32 = format == kFormatFloat && bits == 32;
      if (!pcm16 && !float32) {
        r.fail("unsupported sample format " + std::to_string(format) + "/" +
               std::to_string(bits) + " bit");
      }
      const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
      const std::size_t available = std::min<std::size_t>(size, r.remaining());
      const std::size_t length = available / frame_bytes;
      Waveform w(channels, length, static_cast<int>(rate));
      for (std::size_t n = 0; n < length; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
          w(c, n) = pcm16 ? r.i16() / 32768.0 : static_cast<double>(r.f32());
        }
      }
      return w;
    }
    r.seek(std::min(body + size + (size & 1u), body + r.remaining()));
  }
  r.fail("no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w, SampleFormat format) {
  w.validate();
  const std::uint16_t bits = format == SampleFormat::kPcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(w.channels * bits / 8);
  const std::uint32_t data_bytes = checked_u32(w.length * block, "data size");
  ByteWriter b;
  b.bytes("RIFF", 4);
  b.u32(36 + data_bytes);
  b.bytes("WAVE", 4);
  b.bytes("fmt ", 4);
  b.u32(16);
  b.u16(format == SampleFormat::kPcm16 ? kFormatPcm : kFormatFloat);
  b.u16(static_cast<std::uint16_t>(w.channels));
  b.u32(static_cast<std::uint32_t>(w.sample_rate));
  b.u32(static_cast<std::uint32_t>(w.sample_rate) * block);
  b.u16(block);
  b.u16(bits);
  b.bytes("data", 4);
  b.u32(data_bytes);
  for (std::size_t n = 0; n < w.length; ++n) {
    for (std::size_t c = 0; c < w.channels; ++c) {
      const double v = w(c, n);
      if (format == SampleFormat::kPcm16) {
        const double scaled = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        b.i16(static_cast<std::int16_t>(scaled));
      } else {
        b.f32(static_cast<float>(v));
      }
    }
  }
  dump(path, b.data());
}

void write_spectrogram(const std::filesystem::path& path, const Spectrogram& s) {
  ByteWriter b;
  b.bytes("CGSP", 4);
  b.u32(checked_u32(s.frames, "T"));
  b.u32(checked_u32(s.bins, "F"));
  b.u32(checked_u32(s.channels, "M"));
  b.u32(static_cast<std::uint32_t>(s.sample_rate));
  b.u32(static_cast<std::uint32_t>(s.window_len));
  b.u32(static_cast<std::uint32_t>(s.frame_hop));
  for (const auto& v : s.values) {
    b.f64(v.real());
    b.f64(v.imag());
  }
  dump(path, b.data());
}

Spectrogram read_spectrogram(const std::filesystem::path& path) {
  ByteReader r(slurp(path), path.string());
  if (r.tag(4) != "CGSP") r.fail("bad magic, expected CGSP");
  const std::size_t frames = r.u32();
  const std::size_t bins = r.u32();
  const std::size_t channels = r.u32();
  const int rate = static_cast<int>(r.u32());
  const int window_len = static_cast<int>(r.u32());
  const int hop = static_cast<int>(r.u32());
  if (r.remaining() != frames * bins * channels * 16) r.fail("payload size does not match header");
  Spectrogram s(frames, bins, channels, hop, window_len, rate);
  for (auto& v : s.values) {
    const double re = r.f64();
    const double im = r.f64();
    v = {re, im};
  }
  return s;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::size_t count = 1;
  for (auto d : t.dims) count *= d;
  if (count != t.values.size()) throw Error(ErrorKind::kDimension, "tensor dims do not match data");
  ByteWriter b;
  b.bytes("CGTN", 4);
  b.u32(checked_u32(t.dims.size(), "rank"));
  for (auto d : t.dims) b.u32(d);
  for (double v : t.values) b.f64(v);
  dump(path, b.data());
}

Tensor read_tensor(const std::filesystem::path& path) {
  ByteReader r(slurp(path), path.string());
  if (r.tag(4) != "CGTN") r.fail("bad magic, expected CGTN");
  Tensor t;
  const std::uint32_t rank = r.u32();
  if (rank > 16) r.fail("implausible tensor rank");
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.dims.push_back(r.u32());
    count *= t.dims.back();
  }
  if (r.remaining() != count * 8) r.fail("payload size does not match header");
  t.values.resize(count);
  for (auto& v : t.values) v = r.f64();
  return t;
}

Tensor to_tensor(const MaskPosterior& z) {
  return {{checked_u32(z.frames, "T"), checked_u32(z.bins, "F"), checked_u32(z.sources, "K")},
          z.values};
}

Tensor to_tensor(const DoaPosterior& w) {
  return {{checked_u32(w.sources, "K"), checked_u32(w.directions, "D")}, w.values};
}

MaskPosterior mask_from_tensor(const Tensor& t) {
  if (t.dims.size() != 3) throw Error(ErrorKind::kDimension, "mask tensor must have rank 3");
  MaskPosterior z(t.dims[0], t.dims[1], t.dims[2]);
  z.values = t.values;
  return z;
}

DoaPosterior doa_from_tensor(const Tensor& t) {
  if (t.dims.size() != 2) throw Error(ErrorKind::kDimension, "DoA tensor must have rank 2");
  DoaPosterior w(t.dims[0], t.dims[1]);
  w.values = t.values;
  return w;
}

}  // namespace cgmm
