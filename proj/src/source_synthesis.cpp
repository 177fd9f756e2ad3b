#include "avc/source_synthesis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <tuple>

#ifndef AVC_DEFAULT_DATA_DIR
#define AVC_DEFAULT_DATA_DIR "data"
#endif

namespace avc::synth {

namespace {

constexpr double kReferencePressure = 20e-6;  // Pa
constexpr double kFilterWarmup = 0.5;         // s of filter settling discarded

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(std::string_view text, std::string_view what) {
  text = trim(text);
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value))
    throw ConfigError("invalid number '" + std::string(text) + "' for " + std::string(what));
  return value;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model data file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string_view strip_comment(std::string_view line) {
  const auto hash = line.find('#');
  return trim(hash == std::string_view::npos ? line : line.substr(0, hash));
}

// Uniform white noise with unit variance.
class WhiteNoise {
 public:
  explicit WhiteNoise(std::uint64_t seed)
      : engine_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}
  double operator()() {
    constexpr double kScale = 1.7320508075688772 * 2.0 / 4294967296.0;
    return (static_cast<double>(engine_()) + 0.5) * kScale - 1.7320508075688772;
  }

 private:
  std::mt19937 engine_;
};

void check_duration_and_rate(double duration, double sample_rate, double highest_edge_hz) {
  if (!(duration > 0.0) || !std::isfinite(duration))
    throw DomainError("duration must be positive");
  if (!(sample_rate >= 2.0 * highest_edge_hz))
    throw DomainError("sample rate " + std::to_string(sample_rate) +
                      " Hz is below twice the highest band edge " + std::to_string(highest_edge_hz) +
                      " Hz");
}

std::size_t sample_count(double duration, double sample_rate) {
  return static_cast<std::size_t>(std::llround(duration * sample_rate));
}

}  // namespace

double upper_source_height(VehicleClass cls) {
  return cls == VehicleClass::Car ? kCarUpperSourceHeight : kCvUpperSourceHeight;
}

double third_octave_center(int band_index) { return 1000.0 * std::pow(10.0, band_index / 10.0); }

int third_octave_index(double nominal_hz) {
  if (!(nominal_hz > 0.0)) throw DomainError("band frequency must be positive");
  return static_cast<int>(std::lround(10.0 * std::log10(nominal_hz / 1000.0)));
}

double third_octave_lower_edge(double center_hz) { return center_hz * std::pow(10.0, -0.05); }
double third_octave_upper_edge(double center_hz) { return center_hz * std::pow(10.0, 0.05); }

void ThirdOctaveSpectrum::validate() const {
  if (band_center_frequencies.empty() ||
      band_center_frequencies.size() != band_levels.size())
    throw DomainError("spectrum must have one level per band and at least one band");
  const double ratio = std::cbrt(2.0);
  for (std::size_t i = 0; i < band_levels.size(); ++i) {
    if (!std::isfinite(band_levels[i]) || !(band_center_frequencies[i] > 0.0))
      throw DomainError("spectrum has a non-finite level or invalid center");
    if (i > 0) {
      const double r = band_center_frequencies[i] / band_center_frequencies[i - 1];
      if (std::abs(r / ratio - 1.0) > 0.01)
        throw DomainError("spectrum band centers are not consecutive third-octaves");
    }
  }
}

double sound_power_to_mean_square_pressure(double level_db) {
  // Free field at 1 m: Lp = Lw - 10 log10(4 pi).
  return kReferencePressure * kReferencePressure *
         std::pow(10.0, (level_db - 10.0 * std::log10(4.0 * dsp::kPi)) / 10.0);
}

double mean_square_pressure_to_sound_power(double mean_square) {
  return 10.0 * std::log10(mean_square / (kReferencePressure * kReferencePressure)) +
         10.0 * std::log10(4.0 * dsp::kPi);
}

// ---------------------------------------------------------------------------

RollingNoiseTable RollingNoiseTable::load(const std::filesystem::path& path) {
  return parse(read_text_file(path));
}

RollingNoiseTable RollingNoiseTable::parse(std::string_view text) {
  RollingNoiseTable table;
  std::map<VehicleClass, std::map<int, Row>> by_band;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = strip_comment(line);
    if (line.empty()) continue;

    std::vector<std::string_view> fields;
    while (true) {
      const auto comma = line.find(',');
      fields.push_back(trim(line.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      line = line.substr(comma + 1);
    }
    if (fields.size() != 4)
      throw ConfigError("rolling-noise table line " + std::to_string(line_no) +
                        ": expected 4 fields");
    const VehicleClass cls = parse_vehicle_class(fields[0]);
    const double nominal = parse_double(fields[1], "f_center_hz");
    const int index = third_octave_index(nominal);
    Row row{third_octave_center(index), parse_double(fields[2], "a_db"),
            parse_double(fields[3], "b_db")};
    if (std::abs(row.center_hz / nominal - 1.0) > 0.03)
      throw ConfigError("rolling-noise table line " + std::to_string(line_no) + ": " +
                        std::string(fields[1]) + " Hz is not a third-octave center");
    if (!by_band[cls].emplace(index, row).second)
      throw ConfigError("rolling-noise table: duplicate band " + std::string(fields[1]) +
                        " Hz for class " + std::string(fields[0]));
  }

  for (auto& [cls, bands] : by_band) {
    std::vector<Row> rows;
    int previous = 0;
    for (const auto& [index, row] : bands) {
      if (row.center_hz > kMaxBandCenterHz * 1.01) continue;
      if (!rows.empty() && index != previous + 1)
        throw ConfigError("rolling-noise table: missing band below " +
                          std::to_string(row.center_hz) + " Hz for class " +
                          std::string(to_string(cls)));
      rows.push_back(row);
      previous = index;
    }
    table.rows_[cls] = std::move(rows);
  }
  return table;
}

const std::vector<RollingNoiseTable::Row>& RollingNoiseTable::rows(VehicleClass cls) const {
  const auto it = rows_.find(cls);
  if (it == rows_.end() || it->second.empty())
    throw ConfigError("rolling-noise table has no rows for class " + std::string(to_string(cls)));
  return it->second;
}

ThirdOctaveSpectrum RollingNoiseTable::levels_at(VehicleClass cls, double speed_kmh) const {
  if (!(speed_kmh > 0.0)) throw DomainError("speed must be positive");
  const auto& table_rows = rows(cls);
  ThirdOctaveSpectrum spectrum;
  const double speed_term = std::log10(speed_kmh / kReferenceSpeedKmh);
  for (const Row& row : table_rows) {
    spectrum.band_center_frequencies.push_back(row.center_hz);
    spectrum.band_levels.push_back(row.a_db + row.b_db * speed_term);
  }
  return spectrum;
}

// ---------------------------------------------------------------------------

EngineModel EngineModel::load(const std::filesystem::path& path) {
  return parse(read_text_file(path));
}

EngineModel EngineModel::parse(std::string_view text) {
  EngineModel model;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = strip_comment(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("engine model line " + std::to_string(line_no) + ": expected key = value");
    const std::string_view key = trim(line.substr(0, eq));
    const double value = parse_double(line.substr(eq + 1), key);

    if (key == "harmonics") {
      model.harmonics = static_cast<int>(value);
    } else if (key == "harmonic_decay_exponent") {
      model.harmonic_decay_exponent = value;
    } else if (key == "noise_power_fraction") {
      model.noise_power_fraction = value;
    } else if (key == "noise_low_hz") {
      model.noise_low_hz = value;
    } else if (key == "noise_high_hz") {
      model.noise_high_hz = value;
    } else {
      const auto dot = key.find('.');
      if (dot == std::string_view::npos)
        throw ConfigError("engine model: unknown key '" + std::string(key) + "'");
      ClassParams& p = parse_vehicle_class(key.substr(0, dot)) == VehicleClass::Car ? model.car
                                                                                    : model.cv;
      const std::string_view field = key.substr(dot + 1);
      if (field == "rpm_offset") {
        p.rpm_offset = value;
      } else if (field == "rpm_per_kmh") {
        p.rpm_per_kmh = value;
      } else if (field == "cylinders") {
        p.cylinders = static_cast<int>(value);
      } else {
        throw ConfigError("engine model: unknown key '" + std::string(key) + "'");
      }
    }
  }
  if (model.harmonics < 1 || model.noise_power_fraction < 0.0 ||
      model.noise_power_fraction >= 1.0 || !(model.noise_high_hz > model.noise_low_hz) ||
      model.car.cylinders < 1 || model.cv.cylinders < 1)
    throw ConfigError("engine model: parameters out of range");
  return model;
}

double EngineModel::rpm(VehicleClass cls, double speed_kmh) const {
  const ClassParams& p = params(cls);
  return p.rpm_offset + p.rpm_per_kmh * speed_kmh;
}

double EngineModel::firing_frequency(VehicleClass cls, double speed_kmh) const {
  return rpm(cls, speed_kmh) / 60.0 * params(cls).cylinders / 2.0;
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("AVC_DATA_DIR"); env != nullptr && *env != '\0')
    return std::filesystem::path(env);
  return std::filesystem::path(AVC_DEFAULT_DATA_DIR);
}

const RollingNoiseTable& default_rolling_table() {
  static const RollingNoiseTable table =
      RollingNoiseTable::load(default_data_dir() / "rolling_noise_coefficients.csv");
  return table;
}

const EngineModel& default_engine_model() {
  static const EngineModel model = EngineModel::load(default_data_dir() / "engine_model.cfg");
  return model;
}

ThirdOctaveSpectrum rolling_noise_spectrum(const RollingNoiseTable& table, VehicleClass cls,
                                           double speed_kmh) {
  if (!(speed_kmh >= kMinSpeedKmh && speed_kmh <= kMaxSpeedKmh))
    throw DomainError("rolling noise: speed " + std::to_string(speed_kmh) +
                      " km/h outside [10, 130]");
  return table.levels_at(cls, speed_kmh);
}

ThirdOctaveSpectrum rolling_noise_spectrum(VehicleClass cls, double speed_kmh) {
  return rolling_noise_spectrum(default_rolling_table(), cls, speed_kmh);
}

// ---------------------------------------------------------------------------

std::vector<int> third_octave_bin_bands(std::span<const double> centers_hz, std::size_t n,
                                        double sample_rate) {
  std::vector<int> band(n / 2 + 1, -1);
  for (std::size_t j = 0; j < centers_hz.size(); ++j) {
    const double lo = third_octave_lower_edge(centers_hz[j]);
    const double hi = third_octave_upper_edge(centers_hz[j]);
    const auto k0 = static_cast<std::size_t>(std::ceil(lo * n / sample_rate));
    for (std::size_t k = k0; k < band.size(); ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n);
      if (f < lo) continue;
      if (f >= hi) break;
      band[k] = static_cast<int>(j);
    }
  }
  return band;
}

Waveform synthesize_shaped_noise(const ThirdOctaveSpectrum& spectrum, double duration,
                                 double sample_rate, std::uint64_t seed) {
  spectrum.validate();
  check_duration_and_rate(duration, sample_rate,
                          third_octave_upper_edge(spectrum.band_center_frequencies.back()));

  const std::size_t n = sample_count(duration, sample_rate);
  const std::size_t nfft = std::max<std::size_t>(n, 2);
  std::vector<double> buffer(nfft);
  std::mt19937_64 rng(mix_seed(seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : buffer) v = normal(rng);

  dsp::RealFft fft(nfft);
  std::vector<std::complex<double>> spec(fft.bins());
  fft.forward(buffer, spec);

  // Two-sided bin count per band; E|X_k|^2 = nfft for unit white noise, so a
  // mask of sqrt(target * nfft / count) gives the target power after the
  // 1/nfft inverse scaling.
  const std::vector<int> band = third_octave_bin_bands(spectrum.band_center_frequencies, nfft,
                                                       sample_rate);
  std::vector<double> count(spectrum.size(), 0.0);
  for (std::size_t k = 0; k < band.size(); ++k) {
    if (band[k] < 0) continue;
    const bool self_mirror = k == 0 || 2 * k == nfft;
    count[static_cast<std::size_t>(band[k])] += self_mirror ? 1.0 : 2.0;
  }
  std::vector<double> mask(spectrum.size(), 0.0);
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (count[j] > 0.0)
      mask[j] = std::sqrt(sound_power_to_mean_square_pressure(spectrum.band_levels[j]) *
                          static_cast<double>(nfft) / count[j]) /
                static_cast<double>(nfft);
  for (std::size_t k = 0; k < spec.size(); ++k)
    spec[k] *= band[k] < 0 ? 0.0 : mask[static_cast<std::size_t>(band[k])];

  fft.inverse(spec, buffer);
  buffer.resize(n);
  return buffer;
}

Waveform synthesize_engine_noise(const EngineModel& model, VehicleClass cls, double speed_kmh,
                                 double duration, double sample_rate, std::uint64_t seed) {
  if (!(speed_kmh > 0.0)) throw DomainError("engine noise: speed must be positive");
  check_duration_and_rate(duration, sample_rate, third_octave_upper_edge(kMaxBandCenterHz));

  const std::size_t n = sample_count(duration, sample_rate);
  Waveform out(n, 0.0);
  std::mt19937_64 rng(mix_seed(seed, 0));
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * dsp::kPi);

  const double f0 = model.firing_frequency(cls, speed_kmh);
  double harmonic_power = 0.0;
  // sin recurrence per harmonic: s[k] = 2 cos(w) s[k-1] - s[k-2]
  std::vector<double> amp, c2, s1, s2;
  for (int h = 1; h <= model.harmonics; ++h) {
    const double f = h * f0;
    const double phase = phase_dist(rng);
    if (f >= 0.45 * sample_rate) continue;
    const double a = std::pow(static_cast<double>(h), -model.harmonic_decay_exponent);
    harmonic_power += a * a / 2.0;
    const double w = 2.0 * dsp::kPi * f / sample_rate;
    amp.push_back(a);
    c2.push_back(2.0 * std::cos(w));
    s2.push_back(std::sin(phase - w));
    s1.push_back(std::sin(phase));
  }
  const std::size_t hn = amp.size();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t h = 0; h < hn; ++h) {
      acc += amp[h] * s1[h];
      const double next = c2[h] * s1[h] - s2[h];
      s2[h] = s1[h];
      s1[h] = next;
    }
    out[i] = acc;
  }

  if (model.noise_power_fraction > 0.0) {
    const std::size_t warmup = sample_count(kFilterWarmup, sample_rate);
    std::vector<double> noise(n + warmup);
    WhiteNoise white(mix_seed(seed, 1));
    for (double& v : noise) v = white();
    const double hi = std::min(model.noise_high_hz, 0.45 * sample_rate);
    dsp::BiquadCascade band = dsp::butterworth_bandpass(model.noise_low_hz, hi, sample_rate, 2);
    band.process(noise, noise);
    const std::span<const double> kept(noise.data() + warmup, n);
    const double measured = mean_square(kept);
    if (measured > 0.0) {
      const double wanted =
          harmonic_power * model.noise_power_fraction / (1.0 - model.noise_power_fraction);
      const double scale = std::sqrt(wanted / measured);
      for (std::size_t i = 0; i < n; ++i) out[i] += scale * kept[i];
    }
  }
  return out;
}

Waveform synthesize_engine_noise(VehicleClass cls, double speed_kmh, double duration,
                                 double sample_rate, std::uint64_t seed) {
  return synthesize_engine_noise(default_engine_model(), cls, speed_kmh, duration, sample_rate,
                                 seed);
}

Waveform normalize_engine_to_rolling(std::span<const double> engine,
                                     std::span<const double> rolling) {
  if (engine.empty() || rolling.empty())
    throw DomainError("normalize_engine_to_rolling: empty signal");
  const double engine_power = mean_square(engine);
  if (!(engine_power > 0.0))
    throw DomainError("normalize_engine_to_rolling: engine signal is all zero");
  const double scale = std::sqrt(mean_square(rolling) / engine_power);
  Waveform out(engine.begin(), engine.end());
  for (double& v : out) v *= scale;
  return out;
}

SourceSignalPair build_vehicle_sources(VehicleClass cls, double speed_kmh, double duration,
                                       double sample_rate, std::uint64_t seed, SourceMix mix) {
  const ThirdOctaveSpectrum spectrum = rolling_noise_spectrum(cls, speed_kmh);
  Waveform rolling = synthesize_shaped_noise(spectrum, duration, sample_rate, mix_seed(seed, 1));
  const Waveform engine =
      normalize_engine_to_rolling(synthesize_engine_noise(cls, speed_kmh, duration, sample_rate,
                                                          mix_seed(seed, 2)),
                                  rolling);

  const double r_ls = mix.mute_rolling ? 0.0 : std::sqrt(kLowerRollingShare);
  const double r_hs = mix.mute_rolling ? 0.0 : std::sqrt(1.0 - kLowerRollingShare);
  const double e_ls = mix.mute_engine ? 0.0 : std::sqrt(kLowerEngineShare);
  const double e_hs = mix.mute_engine ? 0.0 : std::sqrt(1.0 - kLowerEngineShare);

  SourceSignalPair pair;
  pair.sample_rate = sample_rate;
  pair.ls_height = kLowerSourceHeight;
  pair.hs_height = upper_source_height(cls);
  pair.ls_signal.resize(rolling.size());
  pair.hs_signal.resize(rolling.size());
  for (std::size_t i = 0; i < rolling.size(); ++i) {
    pair.ls_signal[i] = r_ls * rolling[i] + e_ls * engine[i];
    pair.hs_signal[i] = r_hs * rolling[i] + e_hs * engine[i];
  }
  return pair;
}

}  // namespace avc::synth
