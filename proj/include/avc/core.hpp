#pragma once

// Shared vocabulary types for the traffic-noise toolkit: vehicle classes,
// travel directions, counting categories, 3-D vectors, multichannel audio
// buffers and the error hierarchy used across all modules.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace avc {

/// Precondition violated by a caller-supplied value (out-of-range speed,
/// unsupported frequency, degenerate geometry, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Bad or missing configuration / model data.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem or serialization failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class VehicleClass : std::uint8_t { Car = 0, CommercialVehicle = 1 };

/// l2r travels in the near lane, r2l in the far lane.
enum class Direction : std::uint8_t { LeftToRight = 0, RightToLeft = 1 };

inline constexpr std::array<VehicleClass, 2> kVehicleClasses{VehicleClass::Car,
                                                             VehicleClass::CommercialVehicle};
inline constexpr std::array<Direction, 2> kDirections{Direction::LeftToRight,
                                                      Direction::RightToLeft};

/// Number of counting categories: (car-l2r, car-r2l, CV-l2r, CV-r2l).
inline constexpr std::size_t kCategoryCount = 4;

constexpr std::size_t category_index(VehicleClass cls, Direction dir) {
  return 2 * static_cast<std::size_t>(cls) + static_cast<std::size_t>(dir);
}

inline constexpr std::array<std::string_view, kCategoryCount> kCategoryNames{
    "car_l2r", "car_r2l", "cv_l2r", "cv_r2l"};

std::string_view to_string(VehicleClass cls);
std::string_view to_string(Direction dir);
VehicleClass parse_vehicle_class(std::string_view text);
Direction parse_direction(std::string_view text);

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  constexpr bool operator==(const Vec3&) const = default;
};

using Waveform = std::vector<double>;

/// Planar multichannel audio: one equally long sample vector per channel.
struct MultichannelAudio {
  std::vector<Waveform> channels;
  double sample_rate = 0.0;

  MultichannelAudio() = default;
  MultichannelAudio(std::size_t channel_count, std::size_t frames, double rate)
      : channels(channel_count, Waveform(frames, 0.0)), sample_rate(rate) {}

  std::size_t channel_count() const { return channels.size(); }
  std::size_t frames() const { return channels.empty() ? 0 : channels.front().size(); }
  double duration() const { return sample_rate > 0.0 ? frames() / sample_rate : 0.0; }
};

/// One pass-by on the timeline. `id` is unique within a schedule and is the
/// key used for provenance in manifests.
struct VehicleEvent {
  std::uint32_t id = 0;
  VehicleClass vehicle_class = VehicleClass::Car;
  Direction direction = Direction::LeftToRight;
  double speed_kmh = 0.0;
  double cpa_time = 0.0;  // s, absolute on the timeline

  std::size_t category() const { return category_index(vehicle_class, direction); }
  bool operator==(const VehicleEvent&) const = default;
};

inline double mean_square(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

inline constexpr double kmh_to_mps(double kmh) { return kmh / 3.6; }

/// SplitMix64 step; used to derive independent child seeds from a parent.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace avc
