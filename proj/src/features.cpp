#include "avc/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace avc::features {

namespace {

constexpr char kMagic[8] = {'A', 'V', 'C', 'F', 'E', 'A', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "feature files are written in host order and assume little-endian");

std::size_t integer_rate(double rate) {
  const double r = std::round(rate);
  if (!(rate > 0.0) || std::abs(rate - r) > 1e-6)
    throw DomainError("resampler: sample rates must be positive integers");
  return static_cast<std::size_t>(r);
}

}  // namespace

PolyphaseResampler::PolyphaseResampler(double input_rate, double output_rate)
    : PolyphaseResampler(input_rate, output_rate, Design{}) {}

PolyphaseResampler::PolyphaseResampler(double input_rate, double output_rate, Design design) {
  const std::size_t in = integer_rate(input_rate);
  const std::size_t out = integer_rate(output_rate);
  const std::size_t g = std::gcd(in, out);
  up_ = out / g;
  down_ = in / g;

  const double fs_up = static_cast<double>(in) * static_cast<double>(up_);
  const double nyquist = std::min(input_rate, output_rate) / 2.0;
  // Energy between Nyquist and the stop edge may alias into the top of the
  // band; the contract only protects [0, passband_edge].
  const double stop = design.stopband_edge_hz;
  const double pass = std::min(design.passband_edge_hz, nyquist);
  if (!(stop > pass)) throw DomainError("resampler: empty transition band");

  const double transition = (stop - pass) / fs_up;
  std::size_t n = static_cast<std::size_t>(
                      std::ceil((design.attenuation_db - 7.95) / (14.36 * transition))) + 1;
  if (n % 2 == 0) ++n;
  prototype_len_ = n;

  const double fc = 0.5 * (pass + stop) / fs_up;  // cycles per up-rate sample
  const auto window = dsp::kaiser_window(n, dsp::kaiser_beta(design.attenuation_db));
  const double center = static_cast<double>(n - 1) / 2.0;
  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) - center;
    const double arg = 2.0 * fc * x;
    const double s = std::abs(arg) < 1e-12 ? 1.0 : std::sin(dsp::kPi * arg) / (dsp::kPi * arg);
    h[i] = static_cast<double>(up_) * 2.0 * fc * s * window[i];
  }

  taps_per_phase_ = (n + up_ - 1) / up_;
  phases_.assign(up_ * taps_per_phase_, 0.0);
  for (std::size_t p = 0; p < up_; ++p)
    for (std::size_t m = 0; m < taps_per_phase_; ++m)
      if (p + up_ * m < n) phases_[p * taps_per_phase_ + (taps_per_phase_ - 1 - m)] = h[p + up_ * m];
}

Waveform PolyphaseResampler::process(std::span<const double> input) const {
  const std::size_t n = input.size();
  const std::size_t out_len = (n * up_ + down_ - 1) / down_;
  Waveform y(out_len, 0.0);
  const std::size_t delay = (prototype_len_ - 1) / 2;
  for (std::size_t k = 0; k < out_len; ++k) {
    const std::size_t t = k * down_ + delay;
    const std::size_t i_max = t / up_;
    const std::size_t phase = t - i_max * up_;
    const double* taps = &phases_[phase * taps_per_phase_];
    // taps are stored reversed: taps[T-1-m] multiplies x[i_max - m]
    const long first = static_cast<long>(i_max) - static_cast<long>(taps_per_phase_) + 1;
    double acc = 0.0;
    if (first >= 0 && i_max < n) {
      const double* x = input.data() + first;
      for (std::size_t m = 0; m < taps_per_phase_; ++m) acc += taps[m] * x[m];
    } else {
      for (std::size_t m = 0; m < taps_per_phase_; ++m) {
        const long i = first + static_cast<long>(m);
        if (i >= 0 && i < static_cast<long>(n)) acc += taps[m] * input[static_cast<std::size_t>(i)];
      }
    }
    y[k] = acc;
  }
  return y;
}

MultichannelAudio resample_to_16k(const MultichannelAudio& audio, double src_rate) {
  constexpr double kSupported[] = {16000.0, 32000.0, 44100.0, 48000.0};
  if (std::find(std::begin(kSupported), std::end(kSupported), src_rate) == std::end(kSupported))
    throw ConfigError("unsupported source sample rate " + std::to_string(src_rate) +
                      " Hz (expected 16000, 32000, 44100 or 48000)");
  if (src_rate == kDatasetRate) {
    MultichannelAudio copy = audio;
    copy.sample_rate = kDatasetRate;
    return copy;
  }
  const PolyphaseResampler resampler(src_rate, kDatasetRate);
  MultichannelAudio out;
  out.sample_rate = kDatasetRate;
  for (const Waveform& ch : audio.channels) out.channels.push_back(resampler.process(ch));
  return out;
}

MultichannelAudio peak_normalize(const MultichannelAudio& audio) {
  if (audio.frames() == 0) throw DomainError("peak_normalize: empty audio");
  double peak = 0.0;
  for (const Waveform& ch : audio.channels)
    for (double v : ch) peak = std::max(peak, std::abs(v));
  MultichannelAudio out = audio;
  if (peak == 0.0) return out;
  const double gain = 1.0 / peak;
  for (Waveform& ch : out.channels)
    for (double& v : ch) v *= gain;
  return out;
}

std::size_t frame_count(std::size_t samples, const Framing& framing) {
  if (samples < framing.frame_len) return 0;
  return 1 + (samples - framing.frame_len) / framing.hop;
}

std::vector<std::pair<std::size_t, std::size_t>> channel_pairs(std::size_t channels) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < channels; ++i)
    for (std::size_t j = i + 1; j < channels; ++j) pairs.emplace_back(i, j);
  return pairs;
}

namespace {

void check_framing(std::size_t frame_len, std::size_t hop) {
  if (!dsp::is_power_of_two(frame_len) || frame_len < 4)
    throw DomainError("frame length must be a power of two");
  if (hop == 0) throw DomainError("hop must be positive");
}

// Windowed spectra of every channel for one frame.
void frame_spectra(const MultichannelAudio& audio, std::size_t start, std::span<const double> window,
                   dsp::RealFft& fft, std::vector<double>& scratch,
                   std::vector<std::vector<std::complex<double>>>& spectra) {
  const std::size_t n = window.size();
  for (std::size_t c = 0; c < audio.channel_count(); ++c) {
    const Waveform& x = audio.channels[c];
    for (std::size_t i = 0; i < n; ++i) scratch[i] = x[start + i] * window[i];
    fft.forward(scratch, spectra[c]);
  }
}

}  // namespace

GccPhatTensor gcc_phat(const MultichannelAudio& audio, std::size_t frame_len, std::size_t hop,
                       std::size_t max_lag) {
  check_framing(frame_len, hop);
  if (max_lag >= frame_len / 2) throw DomainError("max_lag must be below frame_len / 2");
  if (audio.channel_count() < 2) throw DomainError("GCC-PHAT needs at least two channels");

  const auto pairs = channel_pairs(audio.channel_count());
  GccPhatTensor t;
  t.pairs = pairs.size();
  t.frames = frame_count(audio.frames(), {frame_len, hop});
  t.lags = 2 * max_lag + 1;
  t.frame_len = frame_len;
  t.hop = hop;
  t.max_lag = max_lag;
  t.sample_rate = audio.sample_rate;
  t.values.assign(t.pairs * t.frames * t.lags, 0.0f);

  dsp::RealFft fft(frame_len);
  const auto window = dsp::hann_window(frame_len);
  std::vector<double> scratch(frame_len);
  std::vector<double> corr(frame_len);
  std::vector<std::vector<std::complex<double>>> spectra(
      audio.channel_count(), std::vector<std::complex<double>>(fft.bins()));
  std::vector<std::complex<double>> cross(fft.bins());

  for (std::size_t f = 0; f < t.frames; ++f) {
    frame_spectra(audio, f * hop, window, fft, scratch, spectra);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto& xi = spectra[pairs[p].first];
      const auto& xj = spectra[pairs[p].second];
      // X_j conj(X_i): a positive peak lag means j is a delayed copy of i.
      for (std::size_t k = 0; k < cross.size(); ++k) {
        const std::complex<double> g = xj[k] * std::conj(xi[k]);
        cross[k] = g / std::max(std::abs(g), kPhatFloor);
      }
      fft.inverse(cross, corr);
      float* out = &t.values[(p * t.frames + f) * t.lags];
      const double scale = 1.0 / static_cast<double>(frame_len);
      for (std::size_t l = 0; l < t.lags; ++l) {
        const long lag = static_cast<long>(l) - static_cast<long>(max_lag);
        const std::size_t idx = static_cast<std::size_t>((lag + static_cast<long>(frame_len)) %
                                                         static_cast<long>(frame_len));
        out[l] = static_cast<float>(corr[idx] * scale);
      }
    }
  }
  return t;
}

SpectrogramTensor stft_magnitude(const MultichannelAudio& audio, std::size_t frame_len,
                                 std::size_t hop) {
  check_framing(frame_len, hop);
  SpectrogramTensor t;
  t.channels = audio.channel_count();
  t.frames = frame_count(audio.frames(), {frame_len, hop});
  t.bins = frame_len / 2 + 1;
  t.frame_len = frame_len;
  t.hop = hop;
  t.sample_rate = audio.sample_rate;
  t.values.assign(t.channels * t.frames * t.bins, 0.0f);

  dsp::RealFft fft(frame_len);
  const auto window = dsp::hann_window(frame_len);
  std::vector<double> scratch(frame_len);
  std::vector<std::vector<std::complex<double>>> spectra(
      audio.channel_count(), std::vector<std::complex<double>>(fft.bins()));
  for (std::size_t f = 0; f < t.frames; ++f) {
    frame_spectra(audio, f * hop, window, fft, scratch, spectra);
    for (std::size_t c = 0; c < t.channels; ++c) {
      float* out = &t.values[(c * t.frames + f) * t.bins];
      for (std::size_t k = 0; k < t.bins; ++k) out[k] = static_cast<float>(std::abs(spectra[c][k]));
    }
  }
  return t;
}

double subsample_peak_lag(std::span<const float> row, std::size_t max_lag) {
  if (row.size() != 2 * max_lag + 1) throw std::invalid_argument("subsample_peak_lag: row size");
  const auto it = std::max_element(row.begin(), row.end());
  const std::size_t i = static_cast<std::size_t>(it - row.begin());
  double delta = 0.0;
  if (i > 0 && i + 1 < row.size()) {
    const double a = row[i - 1], b = row[i], c = row[i + 1];
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) delta = 0.5 * (a - c) / denom;
  }
  return static_cast<double>(i) - static_cast<double>(max_lag) + delta;
}

double estimate_delay(std::span<const double> xi, std::span<const double> xj, std::size_t center,
                      std::size_t frame_len, std::size_t upsample, double max_lag_samples) {
  check_framing(frame_len, 1);
  if (upsample == 0 || !dsp::is_power_of_two(upsample))
    throw DomainError("upsample factor must be a power of two");
  if (center < frame_len / 2 || center + frame_len / 2 > std::min(xi.size(), xj.size()))
    throw DomainError("estimate_delay: frame exceeds the signal");

  const std::size_t start = center - frame_len / 2;
  const auto window = dsp::hann_window(frame_len);
  dsp::RealFft fft(frame_len);
  std::vector<double> scratch(frame_len);
  std::vector<std::complex<double>> si(fft.bins()), sj(fft.bins());
  for (std::size_t n = 0; n < frame_len; ++n) scratch[n] = xi[start + n] * window[n];
  fft.forward(scratch, si);
  for (std::size_t n = 0; n < frame_len; ++n) scratch[n] = xj[start + n] * window[n];
  fft.forward(scratch, sj);

  const std::size_t big = frame_len * upsample;
  dsp::RealFft ifft(big);
  std::vector<std::complex<double>> cross(ifft.bins(), 0.0);
  for (std::size_t k = 0; k < fft.bins(); ++k) {
    const std::complex<double> g = sj[k] * std::conj(si[k]);
    cross[k] = g / std::max(std::abs(g), kPhatFloor);
  }
  cross[frame_len / 2] *= 0.5;  // split the Nyquist bin of the short transform
  std::vector<double> corr(big);
  ifft.inverse(cross, corr);

  const long reach = static_cast<long>(std::ceil(max_lag_samples * static_cast<double>(upsample)));
  const long nbig = static_cast<long>(big);
  auto at = [&](long lag) { return corr[static_cast<std::size_t>((lag + nbig) % nbig)]; };
  long best = -reach;
  for (long lag = -reach; lag <= reach; ++lag)
    if (at(lag) > at(best)) best = lag;
  const double a = at(best - 1), b = at(best), c = at(best + 1);
  const double denom = a - 2.0 * b + c;
  const double delta = denom < 0.0 ? 0.5 * (a - c) / denom : 0.0;
  return (static_cast<double>(best) + delta) / static_cast<double>(upsample);
}

// ---------------------------------------------------------------------------

void write_feature_file(const std::filesystem::path& path, const FeatureFile& features) {
  const GccPhatTensor& g = features.gcc;
  const SpectrogramTensor& s = features.spectrogram;
  nlohmann::json tensors = nlohmann::json::array();
  const std::size_t gcc_bytes = g.values.size() * sizeof(float);
  const std::size_t spec_bytes = s.values.size() * sizeof(float);
  nlohmann::json pair_order = nlohmann::json::array();
  for (const auto& [i, j] : channel_pairs(s.channels != 0 ? s.channels : 4))
    pair_order.push_back({i, j});
  tensors.push_back({{"name", "gcc_phat"},
                     {"shape", {g.pairs, g.frames, g.lags}},
                     {"axes", {"pair", "frame", "lag"}},
                     {"offset", 0},
                     {"bytes", gcc_bytes}});
  tensors.push_back({{"name", "spectrogram"},
                     {"shape", {s.channels, s.frames, s.bins}},
                     {"axes", {"channel", "frame", "bin"}},
                     {"offset", gcc_bytes},
                     {"bytes", spec_bytes}});
  const nlohmann::json header = {
      {"format", "avc-features"},     {"version", 1},
      {"dtype", "float32"},           {"endianness", "little"},
      {"sample_rate", g.sample_rate}, {"frame_len", g.frame_len},
      {"hop", g.hop},                 {"max_lag", g.max_lag},
      {"window", "hann"},             {"lag_convention", std::string(kLagConvention)},
      {"pair_order", pair_order},     {"spectrogram_scale", "magnitude_unnormalized"},
      {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature file " + path.string());
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(g.values.data()), static_cast<std::streamsize>(gcc_bytes));
  out.write(reinterpret_cast<const char*>(s.values.data()), static_cast<std::streamsize>(spec_bytes));
  if (!out) throw IoError("failed writing feature file " + path.string());
}

namespace {

std::string read_header_text(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  std::uint32_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a feature file: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw IoError("truncated feature header: " + path.string());
  return text;
}

}  // namespace

std::string read_feature_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  return read_header_text(in, path);
}

FeatureFile read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  const nlohmann::json header = nlohmann::json::parse(read_header_text(in, path));
  FeatureFile f;
  const auto& tensors = header.at("tensors");
  const auto gshape = tensors.at(0).at("shape").get<std::vector<std::size_t>>();
  const auto sshape = tensors.at(1).at("shape").get<std::vector<std::size_t>>();
  f.gcc.pairs = gshape.at(0);
  f.gcc.frames = gshape.at(1);
  f.gcc.lags = gshape.at(2);
  f.gcc.frame_len = header.at("frame_len");
  f.gcc.hop = header.at("hop");
  f.gcc.max_lag = header.at("max_lag");
  f.gcc.sample_rate = header.at("sample_rate");
  f.spectrogram.channels = sshape.at(0);
  f.spectrogram.frames = sshape.at(1);
  f.spectrogram.bins = sshape.at(2);
  f.spectrogram.frame_len = f.gcc.frame_len;
  f.spectrogram.hop = f.gcc.hop;
  f.spectrogram.sample_rate = f.gcc.sample_rate;
  f.gcc.values.resize(f.gcc.pairs * f.gcc.frames * f.gcc.lags);
  f.spectrogram.values.resize(f.spectrogram.channels * f.spectrogram.frames * f.spectrogram.bins);
  in.read(reinterpret_cast<char*>(f.gcc.values.data()),
          static_cast<std::streamsize>(f.gcc.values.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(f.spectrogram.values.data()),
          static_cast<std::streamsize>(f.spectrogram.values.size() * sizeof(float)));
  if (!in) throw IoError("truncated feature payload: " + path.string());
  return f;
}

FeatureFile compute_features(const MultichannelAudio& audio, const Framing& framing,
                             std::size_t max_lag) {
  const MultichannelAudio prepared =
      peak_normalize(audio.sample_rate == kDatasetRate ? audio
                                                       : resample_to_16k(audio, audio.sample_rate));
  return {gcc_phat(prepared, framing.frame_len, framing.hop, max_lag),
          stft_magnitude(prepared, framing.frame_len, framing.hop)};
}

}  // namespace avc::features
