#pragma once

// Moving point source over a reflective road surface, received by a static
// microphone array: direct path plus ground image source, spherical
// spreading, atmospheric absorption and the Doppler shift that follows from
// the time-varying propagation delay.
//
// Coordinates: x along the road, y across (lanes at positive y), z up with
// the road surface at z = 0.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "avc/core.hpp"
#include "avc/source_synthesis.hpp"

namespace avc::prop {

inline constexpr double kDefaultSimulationRate = 48000.0;
inline constexpr double kNearMicGuard = 0.1;  // m
inline constexpr std::size_t kAbsorptionBlock = 4096;
inline constexpr std::size_t kAbsorptionCrossfade = 256;
inline constexpr std::size_t kAbsorptionTaps = 65;
inline constexpr int kInterpolationTaps = 8;

struct ArrayGeometry {
  std::vector<Vec3> mic_positions;

  /// 4 mics on the x axis, 0.24 m aperture, centered at x = 0, y = 0, z = 2.7 m.
  static ArrayGeometry default_linear();
  static ArrayGeometry uniform_linear(std::size_t mics, double aperture, double height,
                                      double center_x = 0.0);

  std::size_t size() const { return mic_positions.size(); }
  Vec3 centroid() const;
  void validate() const;
};

struct Trajectory {
  Vec3 start_point;
  Vec3 velocity;  // m/s
  double duration = 0.0;

  Vec3 position(double t) const { return start_point + velocity * t; }
  double speed() const { return velocity.norm(); }
  void validate() const;
};

/// Straight line at height 0 parallel to x. The closest point of approach to
/// x = `cpa_x` is reached at `cpa_time` (duration/2 when not given).
Trajectory make_trajectory(double lane_y, Direction direction, double speed_kmh, double duration,
                           double cpa_x = 0.0, std::optional<double> cpa_time = std::nullopt);

struct Environment {
  double speed_of_sound = 343.0;      // m/s
  double temperature = 20.0;          // deg C
  double relative_humidity = 50.0;    // %
  double pressure_kpa = 101.325;
  double ground_reflection_coeff = 0.9;
  bool air_absorption = true;

  void validate() const;
};

/// Atmospheric attenuation coefficient after ISO 9613-1, dB/m. Frequency
/// must lie in [50 Hz, 10 kHz].
double air_absorption_db_per_m(double frequency, const Environment& env);
/// Same formula without the frequency range check (filter design needs it up
/// to Nyquist).
double air_absorption_unchecked(double frequency, const Environment& env);

/// Linear-phase FIR approximating 10^(-alpha(f) * distance / 20).
std::array<double, kAbsorptionTaps> absorption_fir(double distance, const Environment& env,
                                                   double sample_rate);

/// Emission instant t_e with t_receive = t_e + |source(t_e) - mic| / c,
/// solved by Newton iteration from `guess`.
struct EmissionSolution {
  double emission_time = 0.0;
  double distance = 0.0;
  int iterations = 0;
};
EmissionSolution solve_emission_time(const Trajectory& trajectory, double source_z,
                                     const Vec3& mic, double receive_time, double speed_of_sound,
                                     double guess);

/// 8-point Kaiser-windowed sinc fractional-delay reader.
class SincInterpolator {
 public:
  static const SincInterpolator& instance();
  /// Value of `x` at fractional index `position`; samples outside are zero.
  double operator()(std::span<const double> x, double position) const;

 private:
  SincInterpolator();
  static constexpr int kPhases = 1024;
  std::vector<double> table_;  // (kPhases + 1) x kInterpolationTaps
};

/// A waveform emitted from a fixed height above the moving ground point.
struct SourceTerm {
  std::span<const double> signal;
  double height = 0.0;
};

/// Receives several co-moving sources whose emission clocks share sample 0
/// at `signal_start_time`. Absorption is evaluated per mic from the direct
/// path distance of the first source. Output length = duration * rate.
MultichannelAudio simulate_sources(std::span<const SourceTerm> sources,
                                   const Trajectory& trajectory, const ArrayGeometry& array,
                                   const Environment& env, double sample_rate,
                                   double signal_start_time = 0.0);

MultichannelAudio simulate_moving_source(std::span<const double> signal,
                                         const Trajectory& trajectory, double source_height,
                                         const ArrayGeometry& array, const Environment& env,
                                         double sample_rate, double signal_start_time = 0.0);

struct PassbyRecording {
  MultichannelAudio audio;
  std::optional<VehicleEvent> event;
};

PassbyRecording simulate_passby(const synth::SourceSignalPair& sources,
                                const Trajectory& trajectory, const ArrayGeometry& array,
                                const Environment& env,
                                std::optional<VehicleEvent> event = std::nullopt);

}  // namespace avc::prop
