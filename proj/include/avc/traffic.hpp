#pragma once

// Traffic flow composition: Poisson pass-by schedules drawn from an hourly
// profile, rendering and linear mixing of the individual pass-bys into a
// continuous timeline, and cutting of labeled 60 s segments.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "avc/core.hpp"
#include "avc/propagation.hpp"
#include "avc/source_synthesis.hpp"

namespace avc::traffic {

inline constexpr int kHoursPerDay = 24;
inline constexpr double kSecondsPerHour = 3600.0;
inline constexpr double kSegmentLength = 60.0;  // s
inline constexpr double kEventWindow = 30.0;    // s, CPA-centered
inline constexpr double kMinSpeedKmh = 30.0;
inline constexpr double kMaxSpeedKmh = 100.0;
inline constexpr double kMaxLaneRate = 1000.0;  // vehicles per hour per lane
/// Emission history simulated before each window so that the first received
/// samples already carry sound (covers the propagation delay).
inline constexpr double kPreRoll = 1.5;  // s

/// Lane centers, m from the array along y. l2r uses the near lane.
struct LaneGeometry {
  double near_lane_y = 5.75;
  double far_lane_y = 9.25;

  double lane_y(Direction dir) const {
    return dir == Direction::LeftToRight ? near_lane_y : far_lane_y;
  }
  void validate() const;
};

using HourlyRates = std::array<double, kHoursPerDay>;

struct TrafficProfile {
  /// events/hour, indexed [class][direction][hour of day]
  std::array<std::array<HourlyRates, 2>, 2> hourly_rate{};
  double speed_mean = 80.0;  // km/h
  double speed_std = 10.0;   // km/h
  LaneGeometry lanes;

  double rate(VehicleClass cls, Direction dir, int hour) const {
    return hourly_rate[static_cast<std::size_t>(cls)][static_cast<std::size_t>(dir)]
                      [static_cast<std::size_t>(hour)];
  }
  double& rate(VehicleClass cls, Direction dir, int hour) {
    return hourly_rate[static_cast<std::size_t>(cls)][static_cast<std::size_t>(dir)]
                      [static_cast<std::size_t>(hour)];
  }

  /// Same rate for one category at every hour, zero elsewhere.
  static TrafficProfile constant(VehicleClass cls, Direction dir, double events_per_hour);

  /// Rates >= 0 and finite, per-lane hourly totals <= 1000, speed_std >= 0.
  void validate() const;

  /// JSON document: {"hourly_rate": {"car_l2r": [24 numbers] | number, ...},
  /// "speed_mean_kmh", "speed_std_kmh", "lanes": {"near_y", "far_y"}}.
  static TrafficProfile parse(std::string_view json_text);
  static TrafficProfile load(const std::filesystem::path& path);
  std::string to_json() const;
};

/// Events of `total_duration` seconds starting at hour-of-day `start_hour`.
/// Ids are assigned 0..n-1 in cpa_time order.
std::vector<VehicleEvent> sample_schedule(const TrafficProfile& profile, double total_duration,
                                          std::uint64_t seed, int start_hour = 0);

struct RenderSettings {
  prop::ArrayGeometry array = prop::ArrayGeometry::default_linear();
  prop::Environment environment;
  LaneGeometry lanes;
  double simulation_rate = prop::kDefaultSimulationRate;
  synth::SourceMix mix;

  /// Simulation rate must be an integer multiple of 16 kHz.
  void validate() const;
};

/// One pass-by window at the dataset rate. Sample 0 sits at timeline sample
/// `start_sample`, which may be negative for events near the timeline start.
struct EventRendering {
  std::uint32_t event_id = 0;
  std::int64_t start_sample = 0;
  MultichannelAudio audio;

  std::int64_t end_sample() const {
    return start_sample + static_cast<std::int64_t>(audio.frames());
  }
};

/// Deterministic in (event, settings, seed). The window start is snapped to
/// the dataset sample grid so that renderings of the same event mix into any
/// timeline without re-interpolation.
EventRendering render_event(const VehicleEvent& event, const RenderSettings& settings,
                            std::uint64_t seed);

/// Seed of one event's rendering, derived from the timeline seed.
std::uint64_t event_render_seed(std::uint64_t seed, std::uint32_t event_id);

/// First timeline sample of the event window (dataset rate).
std::int64_t event_window_start(const VehicleEvent& event);
inline constexpr std::int64_t kEventWindowSamples = 480000;  // 30 s at 16 kHz

/// Adds the part of `event` overlapping [offset, offset + target frames) into
/// `target`.
void mix_into(MultichannelAudio& target, std::int64_t offset, const EventRendering& event);

/// Whole timeline at 16 kHz. Intended for short durations; generation uses
/// SegmentRenderer to bound memory.
MultichannelAudio render_timeline(std::span<const VehicleEvent> schedule,
                                  const RenderSettings& settings, double total_duration,
                                  std::uint64_t seed);

struct SegmentLabel {
  std::array<std::uint32_t, kCategoryCount> counts{};
  bool operator==(const SegmentLabel&) const = default;
};

struct LabeledSegment {
  std::size_t segment_index = 0;
  MultichannelAudio audio;
  SegmentLabel label;
  std::vector<std::uint32_t> provenance;  // ids with cpa_time in the segment
};

/// Segment containing time t; a CPA exactly on a boundary goes to the later
/// segment.
std::size_t segment_of(double t, double segment_len = kSegmentLength);

std::vector<SegmentLabel> segment_labels(std::span<const VehicleEvent> schedule,
                                         std::size_t segment_count,
                                         double segment_len = kSegmentLength);

std::vector<LabeledSegment> segment_timeline(const MultichannelAudio& timeline,
                                             std::span<const VehicleEvent> schedule,
                                             double segment_len = kSegmentLength);

/// Renders 60 s segments one after another without holding the full
/// timeline. Event renderings are cached while their windows overlap
/// upcoming segments. Summation order is by event id, so output does not
/// depend on the worker count.
class SegmentRenderer {
 public:
  SegmentRenderer(std::vector<VehicleEvent> schedule, RenderSettings settings,
                  double total_duration, std::uint64_t seed, unsigned workers = 1,
                  double segment_len = kSegmentLength);

  std::size_t segment_count() const { return segment_count_; }
  const std::vector<VehicleEvent>& schedule() const { return schedule_; }
  const std::vector<SegmentLabel>& labels() const { return labels_; }

  /// Segments must be requested in nondecreasing index order.
  LabeledSegment render(std::size_t segment_index);

  /// Ids of events whose windows overlap the segment.
  std::vector<std::uint32_t> audible_events(std::size_t segment_index) const;

 private:
  void ensure_rendered(const std::vector<std::uint32_t>& ids);

  std::vector<VehicleEvent> schedule_;
  RenderSettings settings_;
  std::uint64_t seed_;
  unsigned workers_;
  double segment_len_;
  std::size_t segment_samples_;
  std::size_t segment_count_;
  std::vector<SegmentLabel> labels_;
  std::vector<std::vector<std::uint32_t>> members_;  // cpa-in-segment ids
  std::map<std::uint32_t, std::shared_ptr<const EventRendering>> cache_;
};

}  // namespace avc::traffic
