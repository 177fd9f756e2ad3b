#pragma once

// Minimal RIFF/WAVE support for dataset audio: 32-bit float output
// (WAVE_FORMAT_EXTENSIBLE), and reading of 16/24/32-bit integer and 32-bit
// float files.

#include <cstdint>
#include <filesystem>

#include "avc/core.hpp"

namespace avc::wav {

enum class SampleFormat { Pcm16, Pcm24, Pcm32, Float32 };

struct WavInfo {
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint64_t frames = 0;
  SampleFormat format = SampleFormat::Float32;

  double duration() const { return sample_rate ? static_cast<double>(frames) / sample_rate : 0.0; }
};

/// Interleaved little-endian float32. Throws IoError on write failure.
void write_float32(const std::filesystem::path& path, const MultichannelAudio& audio);

WavInfo read_info(const std::filesystem::path& path);
/// Integer formats are scaled to [-1, 1).
MultichannelAudio read(const std::filesystem::path& path);

}  // namespace avc::wav
