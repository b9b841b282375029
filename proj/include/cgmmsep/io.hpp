#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cgmmsep/posterior.hpp"
#include "cgmmsep/signal.hpp"

namespace cgmm {

enum class SampleFormat { kPcm16, kFloat32 };

// RIFF/WAVE with PCM16 or IEEE float32 samples (WAVE_FORMAT_EXTENSIBLE accepted).
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w,
               SampleFormat format = SampleFormat::kFloat32);

// Spectrogram dump: "CGSP", u32 T, F, M, sample_rate, window_len, hop, then
// T*F*M (re, im) float64 pairs, t-major then f then m. Little endian.
void write_spectrogram(const std::filesystem::path& path, const Spectrogram& s);
Spectrogram read_spectrogram(const std::filesystem::path& path);

// Real tensor dump: "CGTN", u32 rank, u32 dims[rank], then float64 values in
// row-major order. Little endian.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

Tensor to_tensor(const MaskPosterior& z);
Tensor to_tensor(const DoaPosterior& w);
MaskPosterior mask_from_tensor(const Tensor& t);
DoaPosterior doa_from_tensor(const Tensor& t);

}  // namespace cgmm
