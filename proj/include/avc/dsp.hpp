#pragma once

// Small signal-processing building blocks shared by the synthesis,
// propagation and feature modules.

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace avc::dsp {

inline constexpr double kPi = 3.14159265358979323846;

/// Direct-form-I biquad section, a0 normalized to 1.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  std::complex<double> response(double omega) const;
};

/// Cascade of biquads with its own state.
class BiquadCascade {
 public:
  BiquadCascade() = default;
  explicit BiquadCascade(std::vector<Biquad> sections);

  void reset();
  /// Filters `x` into `y` (may alias).
  void process(std::span<const double> x, std::span<double> y);
  /// Filters `x` and accumulates `gain * output` into `acc`.
  void process_accumulate(std::span<const double> x, double gain, std::span<double> acc);

  std::complex<double> response(double omega) const;
  const std::vector<Biquad>& sections() const { return sections_; }

 private:
  struct State {
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
  };
  std::vector<Biquad> sections_;
  std::vector<State> state_;
};

/// Digital Butterworth band-pass built from an analog prototype of
/// `prototype_order` poles (the resulting filter has 2*order poles and is
/// realized as `prototype_order` biquads). Unity gain at the geometric center.
BiquadCascade butterworth_bandpass(double low_hz, double high_hz, double sample_rate,
                                   int prototype_order);

/// Second-order Butterworth low/high-pass biquads (bilinear, prewarped).
Biquad butterworth_lowpass2(double cutoff_hz, double sample_rate);
Biquad butterworth_highpass2(double cutoff_hz, double sample_rate);

/// Periodic Hann window (the usual STFT analysis window).
std::vector<double> hann_window(std::size_t n);

double bessel_i0(double x);
/// Kaiser window of length n with shape parameter beta.
std::vector<double> kaiser_window(std::size_t n, double beta);
/// Kaiser beta for a target stop-band attenuation in dB.
double kaiser_beta(double attenuation_db);

bool is_power_of_two(std::size_t n);

/// Real-to-complex FFT of fixed size backed by FFTW. Plans are created under a
/// global lock; execution is reentrant on distinct objects.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  RealFft(RealFft&&) noexcept;
  RealFft& operator=(RealFft&&) noexcept;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// Input of size n, output of size n/2+1. Unnormalized.
  void forward(std::span<const double> in, std::span<std::complex<double>> out);
  /// Input of size n/2+1, output of size n. Unnormalized (scaled by n).
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

 private:
  struct Impl;
  std::size_t n_ = 0;
  std::unique_ptr<Impl> impl_;
};

}  // namespace avc::dsp
