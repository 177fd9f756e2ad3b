#pragma once

// Emitted waveforms of a moving vehicle: rolling (road/tyre) noise shaped to
// a third-octave sound power spectrum, a harmonic engine stand-in, and the
// two vertically stacked point sources that share their power.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "avc/core.hpp"
#include "avc/dsp.hpp"

namespace avc::synth {

/// Reference speed of the rolling-noise speed law.
inline constexpr double kReferenceSpeedKmh = 70.0;
inline constexpr double kMinSpeedKmh = 10.0;
inline constexpr double kMaxSpeedKmh = 130.0;
/// Highest band center kept after truncation for 16 kHz datasets.
inline constexpr double kMaxBandCenterHz = 8000.0;

inline constexpr double kLowerSourceHeight = 0.01;
inline constexpr double kCarUpperSourceHeight = 0.30;
inline constexpr double kCvUpperSourceHeight = 0.75;

/// Share of each constituent's power radiated by the lower source.
inline constexpr double kLowerRollingShare = 0.8;
inline constexpr double kLowerEngineShare = 0.2;

double upper_source_height(VehicleClass cls);

/// Exact base-10 third-octave center (1000 * 10^(index/10)); index 0 = 1 kHz.
double third_octave_center(int band_index);
/// Band index whose exact center is nearest to the nominal frequency.
int third_octave_index(double nominal_hz);
double third_octave_lower_edge(double center_hz);
double third_octave_upper_edge(double center_hz);

/// Per-band sound power levels (dB re 1 pW) at consecutive third-octave
/// centers.
struct ThirdOctaveSpectrum {
  std::vector<double> band_center_frequencies;
  std::vector<double> band_levels;

  std::size_t size() const { return band_levels.size(); }
  /// Throws DomainError when centers are not consecutive third-octaves or a
  /// level is non-finite.
  void validate() const;
};

/// Mean-square free-field pressure (Pa^2) at 1 m for a sound power level.
double sound_power_to_mean_square_pressure(double level_db);
double mean_square_pressure_to_sound_power(double mean_square);

/// Rolling-noise (a, b) coefficients per class and band, loaded from the
/// bundled text table.
class RollingNoiseTable {
 public:
  struct Row {
    double center_hz = 0.0;  // exact base-10 center
    double a_db = 0.0;
    double b_db = 0.0;
  };

  /// Parses `class, f_center_hz, a_db, b_db` rows; `#` starts a comment.
  static RollingNoiseTable load(const std::filesystem::path& path);
  static RollingNoiseTable parse(std::string_view text);

  /// Rows for a class, sorted by frequency, truncated to centers <= 8 kHz.
  /// Throws ConfigError when the class has no rows or bands are missing.
  const std::vector<Row>& rows(VehicleClass cls) const;

  /// a + b*log10(v/70) per band without any speed range check.
  ThirdOctaveSpectrum levels_at(VehicleClass cls, double speed_kmh) const;

 private:
  std::map<VehicleClass, std::vector<Row>> rows_;
};

/// Engine stand-in constants.
struct EngineModel {
  struct ClassParams {
    double rpm_offset = 0.0;
    double rpm_per_kmh = 0.0;
    int cylinders = 4;
  };
  int harmonics = 30;
  double harmonic_decay_exponent = 1.0;
  double noise_power_fraction = 0.1;
  double noise_low_hz = 100.0;
  double noise_high_hz = 2000.0;
  ClassParams car{1500.0, 20.0, 4};
  ClassParams cv{900.0, 12.0, 6};

  static EngineModel load(const std::filesystem::path& path);
  static EngineModel parse(std::string_view text);

  const ClassParams& params(VehicleClass cls) const {
    return cls == VehicleClass::Car ? car : cv;
  }
  double rpm(VehicleClass cls, double speed_kmh) const;
  /// Firing frequency of a four-stroke engine, Hz.
  double firing_frequency(VehicleClass cls, double speed_kmh) const;
};

/// Model data directory; AVC_DATA_DIR in the environment overrides the
/// build-time default.
std::filesystem::path default_data_dir();
/// Tables loaded once from default_data_dir(); safe to call concurrently.
const RollingNoiseTable& default_rolling_table();
const EngineModel& default_engine_model();

/// Checked rolling-noise spectrum: speed must lie in [10, 130] km/h.
ThirdOctaveSpectrum rolling_noise_spectrum(const RollingNoiseTable& table, VehicleClass cls,
                                           double speed_kmh);
ThirdOctaveSpectrum rolling_noise_spectrum(VehicleClass cls, double speed_kmh);

/// Ideal third-octave band of each rFFT bin for a transform of size n:
/// index into `centers_hz`, or -1 outside every band. Bands are
/// [fc 10^-0.05, fc 10^0.05).
std::vector<int> third_octave_bin_bands(std::span<const double> centers_hz, std::size_t n,
                                        double sample_rate);

/// Gaussian white noise through an ideal third-octave filter bank applied
/// in the frequency domain. Expected band powers equal the spectrum (as
/// mean-square pressure at 1 m); nothing is passed outside the bands.
/// Deterministic for a seed.
Waveform synthesize_shaped_noise(const ThirdOctaveSpectrum& spectrum, double duration,
                                 double sample_rate, std::uint64_t seed);

Waveform synthesize_engine_noise(const EngineModel& model, VehicleClass cls, double speed_kmh,
                                 double duration, double sample_rate, std::uint64_t seed);
Waveform synthesize_engine_noise(VehicleClass cls, double speed_kmh, double duration,
                                 double sample_rate, std::uint64_t seed);

/// Scales `engine` to the mean-square power of `rolling`.
Waveform normalize_engine_to_rolling(std::span<const double> engine,
                                     std::span<const double> rolling);

struct SourceSignalPair {
  Waveform ls_signal;
  Waveform hs_signal;
  double sample_rate = 0.0;
  double ls_height = kLowerSourceHeight;
  double hs_height = kCarUpperSourceHeight;
  /// Emission time of sample 0 relative to the trajectory clock, s.
  double start_time = 0.0;
};

/// Hooks for isolating constituents in tests and diagnostics.
struct SourceMix {
  bool mute_rolling = false;
  bool mute_engine = false;
};

SourceSignalPair build_vehicle_sources(VehicleClass cls, double speed_kmh, double duration,
                                       double sample_rate, std::uint64_t seed,
                                       SourceMix mix = {});

}  // namespace avc::synth
