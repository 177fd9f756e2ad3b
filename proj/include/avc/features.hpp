#pragma once

// Preprocessing (16 kHz polyphase resampling, peak normalization) and the
// two frame-aligned tensors consumed by the counting network: GCC-PHAT
// correlations for every microphone pair and per-channel magnitude STFTs.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "avc/core.hpp"
#include "avc/dsp.hpp"

namespace avc::features {

inline constexpr double kDatasetRate = 16000.0;
inline constexpr std::size_t kDefaultFrameLen = 1024;
inline constexpr std::size_t kDefaultHop = 512;
inline constexpr std::size_t kDefaultMaxLag = 32;
inline constexpr double kPhatFloor = 1e-12;

/// Lag sign tag written into feature files: lag > 0 means channel i of the
/// pair leads channel j (j is the delayed copy).
inline constexpr std::string_view kLagConvention = "positive_lag_i_leads_j";

/// Rational polyphase resampler (up by L, low-pass, down by M) with a
/// Kaiser-windowed sinc prototype.
class PolyphaseResampler {
 public:
  struct Design {
    double passband_edge_hz = 7900.0;
    double stopband_edge_hz = 9000.0;
    double attenuation_db = 70.0;
  };

  PolyphaseResampler(double input_rate, double output_rate, Design design);
  PolyphaseResampler(double input_rate, double output_rate);

  std::size_t up() const { return up_; }
  std::size_t down() const { return down_; }
  std::size_t taps() const { return prototype_len_; }

  /// Output sample k sits at input position k*M/L; length ceil(n*L/M).
  Waveform process(std::span<const double> input) const;

 private:
  std::size_t up_ = 1;
  std::size_t down_ = 1;
  std::size_t prototype_len_ = 0;
  std::size_t taps_per_phase_ = 0;
  std::vector<double> phases_;  // up_ x taps_per_phase_, time-reversed per phase
};

/// Input rate must be one of 16, 32, 44.1 or 48 kHz; 16 kHz is returned as is.
MultichannelAudio resample_to_16k(const MultichannelAudio& audio, double src_rate);

/// One common gain so that max |sample| over all channels is 1. All-zero
/// input is returned unchanged.
MultichannelAudio peak_normalize(const MultichannelAudio& audio);

struct Framing {
  std::size_t frame_len = kDefaultFrameLen;
  std::size_t hop = kDefaultHop;
};

/// 1 + (frames - frame_len) / hop, or 0 when shorter than one frame.
std::size_t frame_count(std::size_t samples, const Framing& framing);

/// Channel pairs in tensor order: (0,1),(0,2),(0,3),(1,2),(1,3),(2,3) for 4 mics.
std::vector<std::pair<std::size_t, std::size_t>> channel_pairs(std::size_t channels);

struct GccPhatTensor {
  std::size_t pairs = 0;
  std::size_t frames = 0;
  std::size_t lags = 0;  // 2 * max_lag + 1
  std::size_t frame_len = 0;
  std::size_t hop = 0;
  std::size_t max_lag = 0;
  double sample_rate = 0.0;
  std::vector<float> values;  // [pair][frame][lag], lag index l <-> lag l - max_lag

  float at(std::size_t pair, std::size_t frame, std::size_t lag_index) const {
    return values[(pair * frames + frame) * lags + lag_index];
  }
  std::span<const float> row(std::size_t pair, std::size_t frame) const {
    return {values.data() + (pair * frames + frame) * lags, lags};
  }
};

struct SpectrogramTensor {
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t frame_len = 0;
  std::size_t hop = 0;
  double sample_rate = 0.0;
  std::vector<float> values;  // [channel][frame][bin]

  float at(std::size_t ch, std::size_t frame, std::size_t bin) const {
    return values[(ch * frames + frame) * bins + bin];
  }
};

GccPhatTensor gcc_phat(const MultichannelAudio& audio, std::size_t frame_len, std::size_t hop,
                       std::size_t max_lag);

SpectrogramTensor stft_magnitude(const MultichannelAudio& audio, std::size_t frame_len,
                                 std::size_t hop);

/// Parabolic refinement around the maximum of one GCC row; returns the lag in
/// samples under the tensor's sign convention.
double subsample_peak_lag(std::span<const float> row, std::size_t max_lag);

/// High-resolution delay of channel j relative to channel i (positive when i
/// leads) over one Hann frame centered at `center`: PHAT cross-spectrum,
/// zero-padded inverse transform by `upsample`, parabolic peak refinement.
double estimate_delay(std::span<const double> xi, std::span<const double> xj, std::size_t center,
                      std::size_t frame_len, std::size_t upsample, double max_lag_samples);

// ---------------------------------------------------------------------------
// Feature container

/// Layout: 8-byte magic "AVCFEAT1", uint32 little-endian header length, JSON
/// header (tensor shapes, dtype, framing, lag convention, byte offsets), then
/// raw little-endian float32 payloads.
struct FeatureFile {
  GccPhatTensor gcc;
  SpectrogramTensor spectrogram;
};

void write_feature_file(const std::filesystem::path& path, const FeatureFile& features);
FeatureFile read_feature_file(const std::filesystem::path& path);
/// Header only (as JSON text), without loading payloads.
std::string read_feature_header(const std::filesystem::path& path);

/// resample -> peak normalize -> GCC-PHAT + STFT.
FeatureFile compute_features(const MultichannelAudio& audio, const Framing& framing,
                             std::size_t max_lag);

}  // namespace avc::features
