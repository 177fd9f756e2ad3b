#include <doctest.h>

#include <filesystem>
#include <json.hpp>

#include "avc/features.hpp"
#include "oracle.hpp"

using namespace avc;
using namespace avc::features;

namespace {

MultichannelAudio from_channels(std::vector<Waveform> chans, double fs) {
  MultichannelAudio a;
  a.channels = std::move(chans);
  a.sample_rate = fs;
  return a;
}

Waveform delayed(const Waveform& x, std::size_t d) {
  Waveform y(x.size(), 0.0);
  for (std::size_t i = d; i < x.size(); ++i) y[i] = x[i - d];
  return y;
}

std::size_t argmax(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

TEST_CASE("16 kHz input passes through unchanged") {
  auto a = from_channels({oracle::white_noise(3000, 1), oracle::white_noise(3000, 2)}, 16000.0);
  const auto b = resample_to_16k(a, 16000.0);
  CHECK(b.sample_rate == 16000.0);
  CHECK(b.channels == a.channels);
}

TEST_CASE("unsupported input rates are configuration errors") {
  auto a = from_channels({Waveform(100, 0.0)}, 22050.0);
  CHECK_THROWS_AS(resample_to_16k(a, 22050.0), ConfigError);
  CHECK_THROWS_AS(resample_to_16k(a, 8000.0), ConfigError);
}

TEST_CASE("48 kHz 1 kHz tone keeps its amplitude within 0.1 dB") {
  for (double rate : {48000.0, 44100.0, 32000.0}) {
    const std::size_t n = static_cast<std::size_t>(rate);
    auto a = from_channels({oracle::tone(n, rate, 1000.0)}, rate);
    const auto b = resample_to_16k(a, rate);
    CHECK(b.sample_rate == 16000.0);
    CHECK(b.frames() == 16000);
    const auto mid = std::span<const double>(b.channels[0]).subspan(2000, 12000);
    const double amp = oracle::sine_amplitude(mid, 16000.0, 1000.0);
    CHECK(std::abs(20.0 * std::log10(amp)) < 0.1);
  }
}

TEST_CASE("anti-alias contract: 7.9 kHz preserved, 9 kHz down by more than 40 dB") {
  const double fs = 48000.0;
  const std::size_t n = 48000;
  auto pass = resample_to_16k(from_channels({oracle::tone(n, fs, 7900.0)}, fs), fs);
  const auto mid = std::span<const double>(pass.channels[0]).subspan(2000, 12000);
  CHECK(std::abs(20.0 * std::log10(oracle::sine_amplitude(mid, 16000.0, 7900.0))) < 0.1);

  // 9 kHz lands on 7 kHz after decimation
  auto stop = resample_to_16k(from_channels({oracle::tone(n, fs, 9000.0)}, fs), fs);
  const auto mid2 = std::span<const double>(stop.channels[0]).subspan(2000, 12000);
  const double rms = std::sqrt(oracle::mean_square(mid2));
  CHECK(20.0 * std::log10(rms / std::sqrt(0.5)) < -40.0);
}

TEST_CASE("resampled output lines up in time with the input") {
  const double fs = 48000.0;
  auto a = from_channels({oracle::tone(48000, fs, 500.0, 1.0, 0.3)}, fs);
  const auto b = resample_to_16k(a, fs);
  const auto expect = oracle::tone(16000, 16000.0, 500.0, 1.0, 0.3);
  double err = 0.0;
  for (std::size_t i = 1000; i < 15000; ++i) err = std::max(err, std::abs(b.channels[0][i] - expect[i]));
  CHECK(err < 1e-3);
}

TEST_CASE("peak normalization") {
  auto a = from_channels({{0.1, -0.25, 0.05}, {0.2, 0.0, -0.1}}, 16000.0);
  const auto b = peak_normalize(a);
  CHECK(b.channels[0][1] == doctest::Approx(-1.0));
  CHECK(b.channels[1][0] == doctest::Approx(0.8));
  CHECK(b.channels[1][2] == doctest::Approx(-0.4));
  const double ratio_before = oracle::mean_square(a.channels[0]) / oracle::mean_square(a.channels[1]);
  const double ratio_after = oracle::mean_square(b.channels[0]) / oracle::mean_square(b.channels[1]);
  CHECK(ratio_after == doctest::Approx(ratio_before).epsilon(1e-14));

  auto z = from_channels({Waveform(10, 0.0), Waveform(10, 0.0)}, 16000.0);
  CHECK(peak_normalize(z).channels == z.channels);
}

TEST_CASE("frame count and pair order") {
  CHECK(frame_count(1024, {}) == 1);
  CHECK(frame_count(1023, {}) == 0);
  CHECK(frame_count(960000, {}) == 1 + (960000 - 1024) / 512);
  const auto p = channel_pairs(4);
  const std::vector<std::pair<std::size_t, std::size_t>> expect{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
  CHECK(p == expect);
}

TEST_CASE("GCC-PHAT: identical channels peak at lag 0 with value about 1") {
  const auto x = oracle::white_noise(8192, 5);
  const auto g = gcc_phat(from_channels({x, x}, 16000.0), 1024, 512, 32);
  REQUIRE(g.pairs == 1);
  CHECK(g.lags == 65);
  for (std::size_t f = 0; f < g.frames; ++f) {
    CHECK(argmax(g.row(0, f)) == 32);
    CHECK(g.at(0, f, 32) == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("GCC-PHAT: channel j delayed by 5 samples peaks at lag +5") {
  const auto x = oracle::white_noise(8192, 6);
  const auto g = gcc_phat(from_channels({x, delayed(x, 5)}, 16000.0), 1024, 512, 32);
  for (std::size_t f = 1; f < g.frames; ++f) CHECK(static_cast<int>(argmax(g.row(0, f))) - 32 == 5);
  // swapping the channels mirrors the lag
  const auto s = gcc_phat(from_channels({delayed(x, 5), x}, 16000.0), 1024, 512, 32);
  for (std::size_t f = 1; f < s.frames; ++f) CHECK(static_cast<int>(argmax(s.row(0, f))) - 32 == -5);
  CHECK(subsample_peak_lag(g.row(0, 3), 32) == doctest::Approx(5.0).epsilon(0.02));
}

TEST_CASE("GCC-PHAT: independent noise has no coherent peak") {
  const auto g = gcc_phat(from_channels({oracle::white_noise(51712, 7), oracle::white_noise(51712, 8)}, 16000.0),
                          1024, 512, 32);
  REQUIRE(g.frames >= 100);
  float worst = 0.0f;
  for (std::size_t f = 0; f < 100; ++f)
    for (float v : g.row(0, f)) worst = std::max(worst, std::abs(v));
  CHECK(worst < 0.3f);
}

TEST_CASE("GCC-PHAT: bounded, silent frames are zero, scale invariant") {
  auto x = oracle::white_noise(6144, 9);
  for (std::size_t i = 0; i < 2048; ++i) x[i] = 0.0;
  const auto y = delayed(oracle::white_noise(6144, 10), 0);
  auto a = from_channels({x, y, delayed(x, 3)}, 16000.0);
  const auto g = gcc_phat(a, 1024, 512, 32);
  CHECK(g.pairs == 3);
  for (float v : g.values) CHECK(std::abs(v) <= 1.0f + 1e-5f);
  for (std::size_t lag = 0; lag < g.lags; ++lag) CHECK(g.at(0, 0, lag) == 0.0f);

  for (double k : {1e-4, 3.0, 250.0}) {
    auto b = a;
    for (auto& ch : b.channels)
      for (double& v : ch) v *= k;
    const auto h = gcc_phat(b, 1024, 512, 32);
    double diff = 0.0;
    for (std::size_t i = 0; i < g.values.size(); ++i)
      diff = std::max(diff, static_cast<double>(std::abs(g.values[i] - h.values[i])));
    CHECK(diff < 1e-6);
  }
}

TEST_CASE("GCC-PHAT preconditions") {
  auto a = from_channels({Waveform(4096, 0.0), Waveform(4096, 0.0)}, 16000.0);
  CHECK_THROWS_AS(gcc_phat(a, 1000, 500, 32), DomainError);
  CHECK_THROWS_AS(gcc_phat(a, 1024, 512, 512), DomainError);
  CHECK_THROWS_AS(gcc_phat(a, 1024, 0, 32), DomainError);
}

TEST_CASE("STFT: 1 kHz tone lands in bin 64; zero input gives zeros") {
  auto a = from_channels({oracle::tone(16000, 16000.0, 1000.0)}, 16000.0);
  const auto s = stft_magnitude(a, 1024, 512);
  CHECK(s.bins == 513);
  for (std::size_t f = 0; f < s.frames; ++f) {
    std::size_t best = 0;
    for (std::size_t b = 0; b < s.bins; ++b)
      if (s.at(0, f, b) > s.at(0, f, best)) best = b;
    CHECK(best == 64);
  }
  auto z = from_channels({Waveform(4096, 0.0)}, 16000.0);
  for (float v : stft_magnitude(z, 1024, 512).values) CHECK(v == 0.0f);
}

TEST_CASE("STFT Parseval: bin energy equals windowed frame energy") {
  const auto x = oracle::white_noise(4096, 12);
  const auto s = stft_magnitude(from_channels({x}, 16000.0), 1024, 512);
  const std::size_t n = 1024;
  for (std::size_t f = 0; f < s.frames; ++f) {
    double time_energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * oracle::kPi * static_cast<double>(i) / n);
      time_energy += (w * x[f * 512 + i]) * (w * x[f * 512 + i]);
    }
    double freq_energy = 0.0;
    for (std::size_t b = 0; b < s.bins; ++b) {
      const double m = s.at(0, f, b);
      freq_energy += (b == 0 || b == n / 2 ? 1.0 : 2.0) * m * m;
    }
    // float32 storage limits the agreement
    CHECK(freq_energy / n == doctest::Approx(time_energy).epsilon(1e-6));
  }
}

TEST_CASE("GCC and spectrogram tensors are frame aligned") {
  for (std::size_t len : {1024u, 5000u, 16000u, 16001u}) {
    auto a = from_channels({oracle::white_noise(len, 1), oracle::white_noise(len, 2)}, 16000.0);
    for (Framing fr : {Framing{1024, 512}, Framing{512, 128}, Framing{256, 256}}) {
      const auto g = gcc_phat(a, fr.frame_len, fr.hop, 16);
      const auto s = stft_magnitude(a, fr.frame_len, fr.hop);
      CHECK(g.frames == s.frames);
      CHECK(g.frames == frame_count(len, fr));
    }
  }
}

TEST_CASE("high-resolution delay estimate") {
  // periodic white noise shifted by 3.3 samples exactly in the DFT domain
  const std::size_t n = 8192;
  const double d = 3.3;
  const auto xi = oracle::white_noise(n, 31);
  std::vector<std::complex<double>> spec(xi.begin(), xi.end());
  oracle::fft(spec);
  for (std::size_t k = 0; k < n; ++k) {
    const double kk = k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
    spec[k] = std::conj(spec[k] * std::polar(1.0, -2.0 * oracle::kPi * kk * d / static_cast<double>(n)));
  }
  spec[n / 2] = 0.0;
  oracle::fft(spec);  // conj(FFT(conj(X))) / n is the inverse
  std::vector<double> xj(n);
  for (std::size_t i = 0; i < n; ++i) xj[i] = spec[i].real() / static_cast<double>(n);

  CHECK(estimate_delay(xi, xj, 4096, 2048, 16, 20.0) == doctest::Approx(d).epsilon(0.01));
  CHECK(estimate_delay(xj, xi, 4096, 2048, 16, 20.0) == doctest::Approx(-d).epsilon(0.01));
  CHECK_THROWS_AS(estimate_delay(xi, xj, 100, 2048, 16, 20.0), DomainError);
  CHECK_THROWS_AS(estimate_delay(xi, xj, 4096, 2048, 3, 20.0), DomainError);
}

TEST_CASE("feature file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "avc_feat_roundtrip.avcf";
  auto a = from_channels({oracle::white_noise(48000, 1), oracle::white_noise(48000, 2),
                          oracle::white_noise(48000, 3), oracle::white_noise(48000, 4)},
                         48000.0);
  const auto f = compute_features(a, Framing{}, kDefaultMaxLag);
  CHECK(f.gcc.pairs == 6);
  CHECK(f.gcc.sample_rate == 16000.0);
  CHECK(f.spectrogram.channels == 4);
  CHECK(f.gcc.frames == frame_count(16000, Framing{}));
  write_feature_file(path, f);
  const auto g = read_feature_file(path);
  CHECK(g.gcc.values == f.gcc.values);
  CHECK(g.spectrogram.values == f.spectrogram.values);
  CHECK(g.gcc.max_lag == 32);
  CHECK(g.spectrogram.bins == 513);

  const auto header = nlohmann::json::parse(read_feature_header(path));
  CHECK(header.at("tensors").at(0).at("shape") == nlohmann::json::array({6, f.gcc.frames, 65}));
  CHECK(header.at("lag_convention") == std::string(kLagConvention));

  std::filesystem::resize_file(path, 100);
  CHECK_THROWS_AS(read_feature_file(path), IoError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_feature_file(path), IoError);
}
