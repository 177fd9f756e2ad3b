#include "avc/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <stdexcept>

#include "avc/core.hpp"

namespace avc::dsp {

std::complex<double> Biquad::response(double omega) const {
  const std::complex<double> z1 = std::polar(1.0, -omega);
  const std::complex<double> z2 = z1 * z1;
  return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

BiquadCascade::BiquadCascade(std::vector<Biquad> sections)
    : sections_(std::move(sections)), state_(sections_.size()) {}

void BiquadCascade::reset() { std::fill(state_.begin(), state_.end(), State{}); }

namespace {

// All sections advanced per sample so the independent recursions overlap.
template <std::size_t N, typename State>
void run_fused(const Biquad* q, State* state, const double* x, double* y, std::size_t n) {
  double x1[N], x2[N], y1[N], y2[N];
  for (std::size_t s = 0; s < N; ++s) {
    x1[s] = state[s].x1;
    x2[s] = state[s].x2;
    y1[s] = state[s].y1;
    y2[s] = state[s].y2;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double v = x[i];
    for (std::size_t s = 0; s < N; ++s) {
      const double out = q[s].b0 * v + q[s].b1 * x1[s] + q[s].b2 * x2[s] - q[s].a1 * y1[s] -
                         q[s].a2 * y2[s];
      x2[s] = x1[s];
      x1[s] = v;
      y2[s] = y1[s];
      y1[s] = out;
      v = out;
    }
    y[i] = v;
  }
  for (std::size_t s = 0; s < N; ++s) state[s] = {x1[s], x2[s], y1[s], y2[s]};
}

}  // namespace

void BiquadCascade::process(std::span<const double> x, std::span<double> y) {
  if (y.size() < x.size()) throw std::invalid_argument("BiquadCascade::process: output too short");
  const std::size_t n = x.size();
  switch (sections_.size()) {
    case 1:
      return run_fused<1>(sections_.data(), state_.data(), x.data(), y.data(), n);
    case 2:
      return run_fused<2>(sections_.data(), state_.data(), x.data(), y.data(), n);
    case 3:
      return run_fused<3>(sections_.data(), state_.data(), x.data(), y.data(), n);
    case 4:
      return run_fused<4>(sections_.data(), state_.data(), x.data(), y.data(), n);
    case 8:
      return run_fused<8>(sections_.data(), state_.data(), x.data(), y.data(), n);
    default:
      break;
  }
  if (x.data() != y.data()) std::copy(x.begin(), x.end(), y.begin());
  for (std::size_t s = 0; s < sections_.size(); ++s)
    run_fused<1>(&sections_[s], &state_[s], y.data(), y.data(), n);
}

void BiquadCascade::process_accumulate(std::span<const double> x, double gain,
                                       std::span<double> acc) {
  std::vector<double> tmp(x.size());
  process(x, tmp);
  for (std::size_t n = 0; n < x.size(); ++n) acc[n] += gain * tmp[n];
}

std::complex<double> BiquadCascade::response(double omega) const {
  std::complex<double> h = 1.0;
  for (const Biquad& q : sections_) h *= q.response(omega);
  return h;
}

BiquadCascade butterworth_bandpass(double low_hz, double high_hz, double sample_rate,
                                   int prototype_order) {
  if (!(low_hz > 0.0 && high_hz > low_hz && high_hz < sample_rate / 2.0))
    throw DomainError("butterworth_bandpass: band edges must satisfy 0 < low < high < fs/2");
  if (prototype_order < 1) throw DomainError("butterworth_bandpass: order must be >= 1");

  const double k = 2.0 * sample_rate;
  const double w1 = k * std::tan(kPi * low_hz / sample_rate);
  const double w2 = k * std::tan(kPi * high_hz / sample_rate);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  std::vector<std::complex<double>> upper_poles;
  const int n = prototype_order;
  for (int i = 0; i < n; ++i) {
    const std::complex<double> p = std::polar(1.0, kPi * (2.0 * i + n + 1) / (2.0 * n));
    const std::complex<double> disc = std::sqrt(p * p * bw * bw - 4.0 * w0sq);
    for (const auto& s : {(p * bw + disc) / 2.0, (p * bw - disc) / 2.0}) {
      if (s.imag() > 0.0) upper_poles.push_back(s);
    }
  }
  if (upper_poles.size() != static_cast<std::size_t>(n))
    throw std::logic_error("butterworth_bandpass: unexpected pole layout");

  std::vector<Biquad> sections;
  sections.reserve(upper_poles.size());
  for (const auto& s : upper_poles) {
    const std::complex<double> zp = (k + s) / (k - s);
    Biquad q;
    q.b0 = 1.0;
    q.b1 = 0.0;
    q.b2 = -1.0;
    q.a1 = -2.0 * zp.real();
    q.a2 = std::norm(zp);
    sections.push_back(q);
  }

  BiquadCascade cascade(sections);
  const double omega0 = 2.0 * std::atan(std::sqrt(w0sq) / k);
  const double g = 1.0 / std::abs(cascade.response(omega0));
  const double per_section = std::pow(g, 1.0 / n);
  for (Biquad& q : sections) {
    q.b0 *= per_section;
    q.b1 *= per_section;
    q.b2 *= per_section;
  }
  return BiquadCascade(std::move(sections));
}

Biquad butterworth_lowpass2(double cutoff_hz, double sample_rate) {
  const double kk = std::tan(kPi * cutoff_hz / sample_rate);
  const double norm = 1.0 / (1.0 + std::sqrt(2.0) * kk + kk * kk);
  Biquad q;
  q.b0 = kk * kk * norm;
  q.b1 = 2.0 * q.b0;
  q.b2 = q.b0;
  q.a1 = 2.0 * (kk * kk - 1.0) * norm;
  q.a2 = (1.0 - std::sqrt(2.0) * kk + kk * kk) * norm;
  return q;
}

Biquad butterworth_highpass2(double cutoff_hz, double sample_rate) {
  const double kk = std::tan(kPi * cutoff_hz / sample_rate);
  const double norm = 1.0 / (1.0 + std::sqrt(2.0) * kk + kk * kk);
  Biquad q;
  q.b0 = norm;
  q.b1 = -2.0 * norm;
  q.b2 = norm;
  q.a1 = 2.0 * (kk * kk - 1.0) * norm;
  q.a2 = (1.0 - std::sqrt(2.0) * kk + kk * kk) * norm;
  return q;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

double bessel_i0(double x) {
  double sum = 1.0;
  double term = 1.0;
  const double half = x / 2.0;
  for (int k = 1; k < 200; ++k) {
    term *= (half / k) * (half / k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

std::vector<double> kaiser_window(std::size_t n, double beta) {
  std::vector<double> w(n);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  const double denom = bessel_i0(beta);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
    w[i] = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

double kaiser_beta(double attenuation_db) {
  if (attenuation_db > 50.0) return 0.1102 * (attenuation_db - 8.7);
  if (attenuation_db >= 21.0)
    return 0.5842 * std::pow(attenuation_db - 21.0, 0.4) + 0.07886 * (attenuation_db - 21.0);
  return 0.0;
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

struct RealFft::Impl {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;

  explicit Impl(std::size_t n) {
    std::lock_guard lock(planner_mutex());
    real = fftw_alloc_real(n);
    spec = fftw_alloc_complex(n / 2 + 1);
    if (real == nullptr || spec == nullptr) throw std::bad_alloc();
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), real, spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec, real, FFTW_ESTIMATE);
  }
  ~Impl() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(real);
    fftw_free(spec);
  }
};

RealFft::RealFft(std::size_t n) : n_(n) {
  if (n < 2) throw DomainError("RealFft: size must be >= 2");
  impl_ = std::make_unique<Impl>(n);
}

RealFft::~RealFft() = default;
RealFft::RealFft(RealFft&&) noexcept = default;
RealFft& RealFft::operator=(RealFft&&) noexcept = default;

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
  if (in.size() != n_ || out.size() != bins()) throw std::invalid_argument("RealFft::forward: size");
  std::memcpy(impl_->real, in.data(), n_ * sizeof(double));
  fftw_execute(impl_->fwd);
  std::memcpy(reinterpret_cast<void*>(out.data()), impl_->spec, bins() * sizeof(fftw_complex));
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
  if (in.size() != bins() || out.size() != n_) throw std::invalid_argument("RealFft::inverse: size");
  std::memcpy(impl_->spec, reinterpret_cast<const void*>(in.data()), bins() * sizeof(fftw_complex));
  fftw_execute(impl_->inv);
  std::memcpy(out.data(), impl_->real, n_ * sizeof(double));
}

}  // namespace avc::dsp
