#include "avc/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace avc::prop {

namespace {

constexpr double kNewtonTolerance = 1e-9;  // s
constexpr int kNewtonMaxIterations = 3;

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = dsp::kPi * x;
  return std::sin(px) / px;
}

// Smallest distance between the segment p(t) = a + v t, t in [t0, t1], and m.
double closest_approach(const Vec3& a, const Vec3& v, double t0, double t1, const Vec3& m) {
  const double vv = v.dot(v);
  double t = vv > 0.0 ? (m - a).dot(v) / vv : t0;
  t = std::clamp(t, t0, t1);
  return (a + v * t - m).norm();
}

}  // namespace

ArrayGeometry ArrayGeometry::default_linear() { return uniform_linear(4, 0.24, 2.7); }

ArrayGeometry ArrayGeometry::uniform_linear(std::size_t mics, double aperture, double height,
                                            double center_x) {
  if (mics < 2) throw DomainError("array needs at least 2 microphones");
  ArrayGeometry g;
  const double spacing = aperture / static_cast<double>(mics - 1);
  for (std::size_t i = 0; i < mics; ++i)
    g.mic_positions.push_back(
        {center_x - aperture / 2.0 + spacing * static_cast<double>(i), 0.0, height});
  return g;
}

Vec3 ArrayGeometry::centroid() const {
  Vec3 c;
  for (const Vec3& p : mic_positions) c = c + p;
  return mic_positions.empty() ? c : c * (1.0 / static_cast<double>(mic_positions.size()));
}

void ArrayGeometry::validate() const {
  if (mic_positions.empty()) throw DomainError("array geometry has no microphones");
}

void Trajectory::validate() const {
  if (!(speed() > 0.0)) throw DomainError("trajectory velocity must be nonzero");
  if (velocity.z != 0.0) throw DomainError("trajectory must stay at constant height");
  if (!(duration > 0.0)) throw DomainError("trajectory duration must be positive");
}

Trajectory make_trajectory(double lane_y, Direction direction, double speed_kmh, double duration,
                           double cpa_x, std::optional<double> cpa_time) {
  if (!(lane_y > 0.0)) throw DomainError("lane offset must be positive");
  if (!(speed_kmh > 0.0)) throw DomainError("speed must be positive");
  if (!(duration > 0.0)) throw DomainError("duration must be positive");
  const double sign = direction == Direction::LeftToRight ? 1.0 : -1.0;
  const double vx = sign * kmh_to_mps(speed_kmh);
  const double t_cpa = cpa_time.value_or(duration / 2.0);
  Trajectory t;
  t.velocity = {vx, 0.0, 0.0};
  t.start_point = {cpa_x - vx * t_cpa, lane_y, 0.0};
  t.duration = duration;
  return t;
}

void Environment::validate() const {
  if (!(speed_of_sound > 0.0)) throw DomainError("speed of sound must be positive");
  if (!(ground_reflection_coeff >= 0.0 && ground_reflection_coeff <= 1.0))
    throw DomainError("ground reflection coefficient must lie in [0, 1]");
  if (!(relative_humidity >= 0.0 && relative_humidity <= 100.0))
    throw DomainError("relative humidity must lie in [0, 100] %");
  if (!(pressure_kpa > 0.0)) throw DomainError("pressure must be positive");
  if (!(temperature > -273.15)) throw DomainError("temperature below absolute zero");
}

double air_absorption_unchecked(double f, const Environment& env) {
  constexpr double kT0 = 293.15;   // reference temperature, K
  constexpr double kT01 = 273.16;  // triple point of water, K
  const double temp = env.temperature + 273.15;
  const double pa = env.pressure_kpa / 101.325;
  const double c_sat = -6.8346 * std::pow(kT01 / temp, 1.261) + 4.6151;
  const double h = env.relative_humidity * std::pow(10.0, c_sat) / pa;  // molar conc., %
  const double tr = temp / kT0;
  const double fr_o = pa * (24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h));
  const double fr_n =
      pa * std::pow(tr, -0.5) * (9.0 + 280.0 * h * std::exp(-4.170 * (std::pow(tr, -1.0 / 3.0) - 1.0)));
  const double f2 = f * f;
  return 8.686 * f2 *
         (1.84e-11 / pa * std::sqrt(tr) +
          std::pow(tr, -2.5) * (0.01275 * std::exp(-2239.1 / temp) / (fr_o + f2 / fr_o) +
                                0.1068 * std::exp(-3352.0 / temp) / (fr_n + f2 / fr_n)));
}

double air_absorption_db_per_m(double frequency, const Environment& env) {
  if (!(frequency >= 50.0 && frequency <= 10000.0))
    throw DomainError("air absorption: frequency " + std::to_string(frequency) +
                      " Hz outside [50, 10000]");
  return air_absorption_unchecked(frequency, env);
}

// ---------------------------------------------------------------------------
// Absorption FIR design

namespace {

constexpr std::size_t kDesignGrid = 512;
constexpr std::size_t kHalfTaps = kAbsorptionTaps / 2;

// Per (env, rate) tables reused across every block of a simulation.
struct AbsorptionDesigner {
  std::vector<double> alpha;   // dB/m on the design grid
  std::vector<double> cosine;  // (kHalfTaps + 1) x (kDesignGrid + 1)
  std::array<double, kHalfTaps + 1> window{};

  AbsorptionDesigner(const Environment& env, double sample_rate)
      : alpha(kDesignGrid + 1), cosine((kHalfTaps + 1) * (kDesignGrid + 1)) {
    for (std::size_t k = 0; k <= kDesignGrid; ++k) {
      const double f = 0.5 * sample_rate * static_cast<double>(k) / kDesignGrid;
      alpha[k] = air_absorption_unchecked(f, env);
    }
    for (std::size_t m = 0; m <= kHalfTaps; ++m)
      for (std::size_t k = 0; k <= kDesignGrid; ++k)
        cosine[m * (kDesignGrid + 1) + k] =
            std::cos(dsp::kPi * static_cast<double>(k) * static_cast<double>(m) / kDesignGrid);
    const auto w = dsp::kaiser_window(kAbsorptionTaps, 6.0);
    for (std::size_t m = 0; m <= kHalfTaps; ++m) window[m] = w[kHalfTaps + m];
  }

  std::array<double, kAbsorptionTaps> design(double distance) const {
    std::array<double, kDesignGrid + 1> desired{};
    constexpr double kDbToNeper = 2.302585092994046 / 20.0;
    for (std::size_t k = 0; k <= kDesignGrid; ++k)
      desired[k] = std::exp(-alpha[k] * distance * kDbToNeper);
    std::array<double, kAbsorptionTaps> h{};
    for (std::size_t m = 0; m <= kHalfTaps; ++m) {
      // Inverse DTFT of the zero-phase response, trapezoidal rule on [0, pi].
      const double* c = &cosine[m * (kDesignGrid + 1)];
      double acc = 0.5 * (desired[0] * c[0] + desired[kDesignGrid] * c[kDesignGrid]);
      for (std::size_t k = 1; k < kDesignGrid; ++k) acc += desired[k] * c[k];
      const double value = acc / kDesignGrid * window[m];
      h[kHalfTaps + m] = value;
      h[kHalfTaps - m] = value;
    }
    return h;
  }
};

}  // namespace

std::array<double, kAbsorptionTaps> absorption_fir(double distance, const Environment& env,
                                                   double sample_rate) {
  return AbsorptionDesigner(env, sample_rate).design(distance);
}

// ---------------------------------------------------------------------------

EmissionSolution solve_emission_time(const Trajectory& trajectory, double source_z,
                                     const Vec3& mic, double receive_time, double c,
                                     double guess) {
  const Vec3 origin = trajectory.start_point + Vec3{0.0, 0.0, source_z} - mic;
  const Vec3& v = trajectory.velocity;
  EmissionSolution s{guess, 0.0, 0};
  for (int it = 0; it < kNewtonMaxIterations; ++it) {
    const Vec3 d = origin + v * s.emission_time;
    const double r = d.norm();
    const double f = c * (receive_time - s.emission_time) - r;
    const double fp = -c - d.dot(v) / r;
    const double step = f / fp;
    s.emission_time -= step;
    s.iterations = it + 1;
    if (std::abs(step) < kNewtonTolerance) break;
  }
  s.distance = c * (receive_time - s.emission_time);
  return s;
}

SincInterpolator::SincInterpolator() : table_((kPhases + 1) * kInterpolationTaps) {
  constexpr double kBeta = 5.0;
  constexpr double kHalfWidth = kInterpolationTaps / 2.0;
  const double norm = dsp::bessel_i0(kBeta);
  for (int p = 0; p <= kPhases; ++p) {
    const double frac = static_cast<double>(p) / kPhases;
    double sum = 0.0;
    for (int k = 0; k < kInterpolationTaps; ++k) {
      // tap offsets -3..4 relative to floor(position)
      const double x = static_cast<double>(k - (kInterpolationTaps / 2 - 1)) - frac;
      const double r = x / kHalfWidth;
      const double w = std::abs(r) < 1.0 ? dsp::bessel_i0(kBeta * std::sqrt(1.0 - r * r)) / norm : 0.0;
      const double value = sinc(x) * w;
      table_[p * kInterpolationTaps + k] = value;
      sum += value;
    }
    for (int k = 0; k < kInterpolationTaps; ++k) table_[p * kInterpolationTaps + k] /= sum;
  }
}

const SincInterpolator& SincInterpolator::instance() {
  static const SincInterpolator interp;
  return interp;
}

double SincInterpolator::operator()(std::span<const double> x, double position) const {
  const double base = std::floor(position);
  const double frac = position - base;
  const double phase = frac * kPhases;
  const int p = std::min(static_cast<int>(phase), kPhases - 1);
  const double t = phase - p;
  const double* w0 = &table_[p * kInterpolationTaps];
  const double* w1 = w0 + kInterpolationTaps;
  const long first = static_cast<long>(base) - (kInterpolationTaps / 2 - 1);
  const long n = static_cast<long>(x.size());
  double acc = 0.0;
  if (first >= 0 && first + kInterpolationTaps <= n) {
    const double* s = x.data() + first;
    for (int k = 0; k < kInterpolationTaps; ++k) acc += (w0[k] + t * (w1[k] - w0[k])) * s[k];
  } else {
    for (int k = 0; k < kInterpolationTaps; ++k) {
      const long i = first + k;
      if (i >= 0 && i < n) acc += (w0[k] + t * (w1[k] - w0[k])) * x[static_cast<std::size_t>(i)];
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------

namespace {

// Adds g/r * s(t_e) for one propagation path into `out`, sample by sample.
// For a rectilinear constant-velocity source the retarded-time equation
// |q - v w| = c w (w = t - t_e, q = source(t) - mic) is a quadratic in w;
// its positive root is evaluated in cancellation-free form. Records the path
// distance per output sample when `distance` is non-null.
void accumulate_path(std::span<const double> signal, double signal_start_time,
                     const Trajectory& trajectory, double source_z, double gain, const Vec3& mic,
                     double c, double sample_rate, std::span<double> out,
                     std::vector<double>* distance) {
  const SincInterpolator& interp = SincInterpolator::instance();
  const double dt = 1.0 / sample_rate;
  const Vec3 q0 = trajectory.start_point + Vec3{0.0, 0.0, source_z} - mic;
  const Vec3& v = trajectory.velocity;
  const double a = c * c - v.dot(v);
  if (!(a > 0.0)) throw DomainError("source speed must stay below the speed of sound");
  const std::size_t n = out.size();

  std::vector<double> delay(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const Vec3 q = q0 + v * t;
    const double qv = q.dot(v);
    const double qq = q.dot(q);
    const double root = std::sqrt(qv * qv + a * qq);
    delay[i] = qv >= 0.0 ? qq / (qv + root) : (root - qv) / a;
  }
  if (distance != nullptr)
    for (std::size_t i = 0; i < n; ++i) (*distance)[i] = c * delay[i];

  const double gain_over_c = gain / c;
  for (std::size_t i = 0; i < n; ++i) {
    const double te = static_cast<double>(i) * dt - delay[i];
    const double position = (te - signal_start_time) * sample_rate;
    out[i] += gain_over_c / delay[i] * interp(signal, position);
  }
}

// Block-wise time-varying absorption with linear crossfades between the
// filters of consecutive blocks.
void apply_absorption(std::span<const double> dry, std::span<const double> distance,
                      const AbsorptionDesigner& designer, std::span<double> wet) {
  const std::size_t n = dry.size();
  const long len = static_cast<long>(n);
  auto filter_at = [&](const std::array<double, kAbsorptionTaps>& h, std::size_t i) {
    const long first = static_cast<long>(i) - static_cast<long>(kHalfTaps);
    double acc = 0.0;
    if (first >= 0 && first + static_cast<long>(kAbsorptionTaps) <= len) {
      const double* x = dry.data() + first;
      for (std::size_t k = 0; k < kAbsorptionTaps; ++k) acc += h[k] * x[k];
    } else {
      for (std::size_t k = 0; k < kAbsorptionTaps; ++k) {
        const long j = first + static_cast<long>(k);
        if (j >= 0 && j < len) acc += h[k] * dry[static_cast<std::size_t>(j)];
      }
    }
    return acc;
  };

  std::array<double, kAbsorptionTaps> previous{};
  for (std::size_t start = 0, block = 0; start < n; start += kAbsorptionBlock, ++block) {
    const std::size_t end = std::min(n, start + kAbsorptionBlock);
    const std::size_t center = std::min(n - 1, start + kAbsorptionBlock / 2);
    const auto h = designer.design(distance[center]);
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t offset = i - start;
      double y = filter_at(h, i);
      if (block > 0 && offset < kAbsorptionCrossfade) {
        const double w = (static_cast<double>(offset) + 0.5) / kAbsorptionCrossfade;
        y = w * y + (1.0 - w) * filter_at(previous, i);
      }
      wet[i] = y;
    }
    previous = h;
  }
}

}  // namespace

MultichannelAudio simulate_sources(std::span<const SourceTerm> sources,
                                   const Trajectory& trajectory, const ArrayGeometry& array,
                                   const Environment& env, double sample_rate,
                                   double signal_start_time) {
  trajectory.validate();
  array.validate();
  env.validate();
  if (sources.empty()) throw DomainError("simulate_sources: no sources");
  if (!(sample_rate > 0.0)) throw DomainError("sample rate must be positive");

  const std::size_t frames = static_cast<std::size_t>(std::llround(trajectory.duration * sample_rate));
  const double c = env.speed_of_sound;

  for (const SourceTerm& src : sources) {
    if (!(src.height >= 0.0)) throw DomainError("source height must be nonnegative");
    const double covered = static_cast<double>(src.signal.size()) / sample_rate + signal_start_time;
    if (covered + 0.5 / sample_rate < trajectory.duration)
      throw DomainError("source signal is shorter than the trajectory duration");
  }

  // Near-singular 1/r guard over the whole emission interval.
  const double t_first = std::min(0.0, signal_start_time);
  for (const Vec3& mic : array.mic_positions) {
    for (const SourceTerm& src : sources) {
      const Vec3 a = trajectory.start_point + Vec3{0.0, 0.0, src.height};
      if (closest_approach(a, trajectory.velocity, t_first, trajectory.duration, mic) <
          kNearMicGuard)
        throw DomainError("trajectory passes within 0.1 m of a microphone");
    }
  }

  std::optional<AbsorptionDesigner> designer;
  if (env.air_absorption) designer.emplace(env, sample_rate);

  MultichannelAudio out(array.size(), frames, sample_rate);
  std::vector<double> dry(frames);
  std::vector<double> distance(frames);
  for (std::size_t m = 0; m < array.size(); ++m) {
    const Vec3& mic = array.mic_positions[m];
    std::fill(dry.begin(), dry.end(), 0.0);
    for (std::size_t s = 0; s < sources.size(); ++s) {
      const SourceTerm& src = sources[s];
      const double z = trajectory.start_point.z + src.height;
      accumulate_path(src.signal, signal_start_time, trajectory, src.height, 1.0, mic, c,
                      sample_rate, dry, s == 0 ? &distance : nullptr);
      if (env.ground_reflection_coeff > 0.0) {
        // Image source mirrored through the road plane z = 0.
        accumulate_path(src.signal, signal_start_time, trajectory,
                        -z - trajectory.start_point.z, env.ground_reflection_coeff, mic, c,
                        sample_rate, dry, nullptr);
      }
    }
    if (designer) {
      apply_absorption(dry, distance, *designer, out.channels[m]);
    } else {
      out.channels[m] = dry;
    }
  }
  return out;
}

MultichannelAudio simulate_moving_source(std::span<const double> signal,
                                         const Trajectory& trajectory, double source_height,
                                         const ArrayGeometry& array, const Environment& env,
                                         double sample_rate, double signal_start_time) {
  const std::array<SourceTerm, 1> terms{SourceTerm{signal, source_height}};
  return simulate_sources(terms, trajectory, array, env, sample_rate, signal_start_time);
}

PassbyRecording simulate_passby(const synth::SourceSignalPair& sources,
                                const Trajectory& trajectory, const ArrayGeometry& array,
                                const Environment& env, std::optional<VehicleEvent> event) {
  if (sources.ls_signal.size() != sources.hs_signal.size())
    throw DomainError("source pair signals differ in length");
  const std::array<SourceTerm, 2> terms{SourceTerm{sources.ls_signal, sources.ls_height},
                                        SourceTerm{sources.hs_signal, sources.hs_height}};
  PassbyRecording rec;
  rec.audio = simulate_sources(terms, trajectory, array, env, sources.sample_rate,
                               sources.start_time);
  rec.event = event;
  for (const Waveform& ch : rec.audio.channels)
    for (double v : ch)
      if (!std::isfinite(v)) throw DomainError("simulate_passby: non-finite output");
  return rec;
}

}  // namespace avc::prop
