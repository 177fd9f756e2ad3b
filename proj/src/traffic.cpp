#include "avc/traffic.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "avc/features.hpp"

namespace avc::traffic {

namespace {

using json = nlohmann::json;

// Domain tags keeping schedule and rendering random streams apart.
constexpr std::uint64_t kScheduleStream = 0x5343484544ULL;
constexpr std::uint64_t kRenderStream = 0x52454e444552ULL;

std::size_t segment_sample_count(double segment_len) {
  return static_cast<std::size_t>(std::llround(segment_len * features::kDatasetRate));
}

void check_whole_segments(double total_duration, double segment_len) {
  if (!(segment_len > 0.0)) throw DomainError("segment length must be positive");
  if (!(total_duration >= 0.0) || !std::isfinite(total_duration))
    throw DomainError("total duration must be finite and nonnegative");
  const double k = total_duration / segment_len;
  if (std::abs(k - std::round(k)) > 1e-9)
    throw DomainError("total duration must be a multiple of the segment length");
}

double truncated_normal(std::mt19937_64& rng, double mean, double std_dev) {
  if (std_dev == 0.0) return std::clamp(mean, kMinSpeedKmh, kMaxSpeedKmh);
  std::normal_distribution<double> dist(mean, std_dev);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double v = dist(rng);
    if (v >= kMinSpeedKmh && v <= kMaxSpeedKmh) return v;
  }
  // Mean far outside the band: acceptance is negligible, fall back to uniform.
  std::uniform_real_distribution<double> uni(kMinSpeedKmh, kMaxSpeedKmh);
  return uni(rng);
}

HourlyRates parse_rates(const json& node, const std::string& key) {
  HourlyRates rates{};
  if (node.is_number()) {
    rates.fill(node.get<double>());
  } else if (node.is_array()) {
    if (node.size() != kHoursPerDay)
      throw ConfigError("hourly_rate." + key + " must hold 24 values");
    for (std::size_t h = 0; h < rates.size(); ++h) {
      if (!node[h].is_number()) throw ConfigError("hourly_rate." + key + " must be numeric");
      rates[h] = node[h].get<double>();
    }
  } else {
    throw ConfigError("hourly_rate." + key + " must be a number or a 24-element array");
  }
  return rates;
}

}  // namespace

void LaneGeometry::validate() const {
  if (!(near_lane_y > 0.0) || !(far_lane_y > 0.0) || !std::isfinite(near_lane_y) ||
      !std::isfinite(far_lane_y))
    throw DomainError("lane centers must be positive distances from the array");
}

TrafficProfile TrafficProfile::constant(VehicleClass cls, Direction dir, double events_per_hour) {
  TrafficProfile p;
  for (int h = 0; h < kHoursPerDay; ++h) p.rate(cls, dir, h) = events_per_hour;
  return p;
}

void TrafficProfile::validate() const {
  for (VehicleClass cls : kVehicleClasses)
    for (Direction dir : kDirections)
      for (int h = 0; h < kHoursPerDay; ++h) {
        const double r = rate(cls, dir, h);
        if (!(r >= 0.0) || !std::isfinite(r))
          throw DomainError("hourly rates must be finite and nonnegative");
      }
  for (Direction dir : kDirections)
    for (int h = 0; h < kHoursPerDay; ++h) {
      const double lane = rate(VehicleClass::Car, dir, h) + rate(VehicleClass::CommercialVehicle, dir, h);
      if (lane > kMaxLaneRate)
        throw DomainError("lane " + std::string(to_string(dir)) + " exceeds 1000 vehicles/hour at hour " +
                          std::to_string(h));
    }
  if (!std::isfinite(speed_mean) || !(speed_std >= 0.0) || !std::isfinite(speed_std))
    throw DomainError("speed distribution parameters must be finite, std >= 0");
  lanes.validate();
}

TrafficProfile TrafficProfile::parse(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("traffic profile: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("traffic profile must be a JSON object");

  TrafficProfile p;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& key = it.key();
    try {
      if (key == "hourly_rate") {
        if (!it->is_object()) throw ConfigError("hourly_rate must be an object");
        for (auto r = it->begin(); r != it->end(); ++r) {
          const auto name = std::find(kCategoryNames.begin(), kCategoryNames.end(), r.key());
          if (name == kCategoryNames.end())
            throw ConfigError("unknown hourly_rate category '" + r.key() + "'");
          const auto cat = static_cast<std::size_t>(std::distance(kCategoryNames.begin(), name));
          p.hourly_rate[cat / 2][cat % 2] = parse_rates(*r, r.key());
        }
      } else if (key == "speed_mean_kmh") {
        p.speed_mean = it->get<double>();
      } else if (key == "speed_std_kmh") {
        p.speed_std = it->get<double>();
      } else if (key == "lanes") {
        for (auto l = it->begin(); l != it->end(); ++l) {
          if (l.key() == "near_y")
            p.lanes.near_lane_y = l->get<double>();
          else if (l.key() == "far_y")
            p.lanes.far_lane_y = l->get<double>();
          else
            throw ConfigError("unknown lanes key '" + l.key() + "'");
        }
      } else if (key == "description") {
        // free text
      } else {
        throw ConfigError("unknown traffic profile key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError("traffic profile field '" + key + "': " + e.what());
    }
  }
  try {
    p.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("traffic profile: ") + e.what());
  }
  return p;
}

TrafficProfile TrafficProfile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open traffic profile " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TrafficProfile::to_json() const {
  json doc;
  json rates = json::object();
  for (VehicleClass cls : kVehicleClasses)
    for (Direction dir : kDirections)
      rates[std::string(kCategoryNames[category_index(cls, dir)])] =
          hourly_rate[static_cast<std::size_t>(cls)][static_cast<std::size_t>(dir)];
  doc["hourly_rate"] = rates;
  doc["speed_mean_kmh"] = speed_mean;
  doc["speed_std_kmh"] = speed_std;
  doc["lanes"] = {{"near_y", lanes.near_lane_y}, {"far_y", lanes.far_lane_y}};
  return doc.dump(2);
}

std::vector<VehicleEvent> sample_schedule(const TrafficProfile& profile, double total_duration,
                                          std::uint64_t seed, int start_hour) {
  profile.validate();
  check_whole_segments(total_duration, kSegmentLength);
  if (start_hour < 0 || start_hour >= kHoursPerDay)
    throw DomainError("start hour must lie in [0, 24)");

  const std::uint64_t root = mix_seed(seed, kScheduleStream);
  std::vector<VehicleEvent> events;
  const auto hours = static_cast<std::size_t>(std::ceil(total_duration / kSecondsPerHour - 1e-12));
  for (std::size_t h = 0; h < hours; ++h) {
    const double t0 = static_cast<double>(h) * kSecondsPerHour;
    const double span = std::min(kSecondsPerHour, total_duration - t0);
    const int hour_of_day = static_cast<int>((static_cast<std::size_t>(start_hour) + h) % kHoursPerDay);
    for (VehicleClass cls : kVehicleClasses)
      for (Direction dir : kDirections) {
        const double mean = profile.rate(cls, dir, hour_of_day) * span / kSecondsPerHour;
        if (mean <= 0.0) continue;
        std::mt19937_64 rng(mix_seed(root, h * kCategoryCount + category_index(cls, dir)));
        std::poisson_distribution<long> count_dist(mean);
        std::uniform_real_distribution<double> when(t0, t0 + span);
        const long count = count_dist(rng);
        for (long i = 0; i < count; ++i) {
          VehicleEvent ev;
          ev.vehicle_class = cls;
          ev.direction = dir;
          ev.cpa_time = when(rng);
          ev.speed_kmh = truncated_normal(rng, profile.speed_mean, profile.speed_std);
          events.push_back(ev);
        }
      }
  }
  std::stable_sort(events.begin(), events.end(), [](const VehicleEvent& a, const VehicleEvent& b) {
    return a.cpa_time < b.cpa_time;
  });
  for (std::size_t i = 0; i < events.size(); ++i) events[i].id = static_cast<std::uint32_t>(i);
  return events;
}

void RenderSettings::validate() const {
  array.validate();
  environment.validate();
  lanes.validate();
  const double ratio = simulation_rate / features::kDatasetRate;
  if (!(ratio >= 1.0) || std::abs(ratio - std::round(ratio)) > 1e-12)
    throw ConfigError("simulation rate must be an integer multiple of 16000 Hz");
}

std::uint64_t event_render_seed(std::uint64_t seed, std::uint32_t event_id) {
  return mix_seed(mix_seed(seed, kRenderStream), event_id);
}

std::int64_t event_window_start(const VehicleEvent& event) {
  return static_cast<std::int64_t>(
      std::floor((event.cpa_time - kEventWindow / 2.0) * features::kDatasetRate));
}

EventRendering render_event(const VehicleEvent& event, const RenderSettings& settings,
                            std::uint64_t seed) {
  settings.validate();
  if (!(event.speed_kmh > 0.0 && event.speed_kmh <= kMaxSpeedKmh))
    throw DomainError("event speed must lie in (0, 100] km/h");

  const std::int64_t s0 = event_window_start(event);
  const double window_t0 = static_cast<double>(s0) / features::kDatasetRate;
  const double fs = settings.simulation_rate;

  synth::SourceSignalPair sources = synth::build_vehicle_sources(
      event.vehicle_class, event.speed_kmh, kEventWindow + kPreRoll, fs, seed, settings.mix);
  sources.start_time = -kPreRoll;
  const prop::Trajectory trajectory =
      prop::make_trajectory(settings.lanes.lane_y(event.direction), event.direction,
                            event.speed_kmh, kEventWindow, 0.0, event.cpa_time - window_t0);
  prop::PassbyRecording rec =
      prop::simulate_passby(sources, trajectory, settings.array, settings.environment, event);

  EventRendering out;
  out.event_id = event.id;
  out.start_sample = s0;
  if (fs == features::kDatasetRate) {
    out.audio = std::move(rec.audio);
  } else {
    out.audio = features::resample_to_16k(rec.audio, fs);
  }
  for (Waveform& ch : out.audio.channels) ch.resize(static_cast<std::size_t>(kEventWindowSamples), 0.0);
  return out;
}

void mix_into(MultichannelAudio& target, std::int64_t offset, const EventRendering& event) {
  if (target.channel_count() != event.audio.channel_count())
    throw DomainError("mix_into: channel count mismatch");
  const auto frames = static_cast<std::int64_t>(target.frames());
  const std::int64_t lo = std::max(offset, event.start_sample);
  const std::int64_t hi = std::min(offset + frames, event.end_sample());
  if (lo >= hi) return;
  for (std::size_t c = 0; c < target.channel_count(); ++c) {
    double* dst = target.channels[c].data() + (lo - offset);
    const double* src = event.audio.channels[c].data() + (lo - event.start_sample);
    for (std::int64_t i = 0; i < hi - lo; ++i) dst[i] += src[i];
  }
}

MultichannelAudio render_timeline(std::span<const VehicleEvent> schedule,
                                  const RenderSettings& settings, double total_duration,
                                  std::uint64_t seed) {
  settings.validate();
  if (!(total_duration >= 0.0)) throw DomainError("total duration must be nonnegative");
  const auto frames = static_cast<std::size_t>(std::llround(total_duration * features::kDatasetRate));
  MultichannelAudio timeline(settings.array.size(), frames, features::kDatasetRate);
  std::vector<const VehicleEvent*> order;
  for (const VehicleEvent& ev : schedule) order.push_back(&ev);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (const VehicleEvent* ev : order) {
    if (event_window_start(*ev) + kEventWindowSamples <= 0 ||
        event_window_start(*ev) >= static_cast<std::int64_t>(frames))
      continue;
    mix_into(timeline, 0, render_event(*ev, settings, event_render_seed(seed, ev->id)));
  }
  return timeline;
}

std::size_t segment_of(double t, double segment_len) {
  if (!(t >= 0.0) || !std::isfinite(t)) throw DomainError("cpa time must be finite and >= 0");
  return static_cast<std::size_t>(std::floor(t / segment_len));
}

std::vector<SegmentLabel> segment_labels(std::span<const VehicleEvent> schedule,
                                         std::size_t segment_count, double segment_len) {
  std::vector<SegmentLabel> labels(segment_count);
  for (const VehicleEvent& ev : schedule) {
    const std::size_t k = segment_of(ev.cpa_time, segment_len);
    if (k >= segment_count) throw DomainError("event cpa time lies beyond the timeline");
    ++labels[k].counts[ev.category()];
  }
  return labels;
}

std::vector<LabeledSegment> segment_timeline(const MultichannelAudio& timeline,
                                             std::span<const VehicleEvent> schedule,
                                             double segment_len) {
  const std::size_t seg_samples = segment_sample_count(segment_len);
  if (seg_samples == 0 || timeline.frames() % seg_samples != 0)
    throw DomainError("timeline duration must be a multiple of the segment length");
  const std::size_t count = timeline.frames() / seg_samples;
  const std::vector<SegmentLabel> labels = segment_labels(schedule, count, segment_len);

  std::vector<LabeledSegment> segments(count);
  for (std::size_t k = 0; k < count; ++k) {
    LabeledSegment& seg = segments[k];
    seg.segment_index = k;
    seg.label = labels[k];
    seg.audio.sample_rate = timeline.sample_rate;
    for (const Waveform& ch : timeline.channels)
      seg.audio.channels.emplace_back(ch.begin() + static_cast<std::ptrdiff_t>(k * seg_samples),
                                      ch.begin() + static_cast<std::ptrdiff_t>((k + 1) * seg_samples));
  }
  for (const VehicleEvent& ev : schedule)
    segments[segment_of(ev.cpa_time, segment_len)].provenance.push_back(ev.id);
  for (LabeledSegment& seg : segments) std::sort(seg.provenance.begin(), seg.provenance.end());
  return segments;
}

SegmentRenderer::SegmentRenderer(std::vector<VehicleEvent> schedule, RenderSettings settings,
                                 double total_duration, std::uint64_t seed, unsigned workers,
                                 double segment_len)
    : schedule_(std::move(schedule)),
      settings_(std::move(settings)),
      seed_(seed),
      workers_(std::max(1u, workers)),
      segment_len_(segment_len) {
  settings_.validate();
  check_whole_segments(total_duration, segment_len);
  segment_samples_ = segment_sample_count(segment_len);
  segment_count_ = static_cast<std::size_t>(std::llround(total_duration / segment_len));
  std::sort(schedule_.begin(), schedule_.end(),
            [](const VehicleEvent& a, const VehicleEvent& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < schedule_.size(); ++i)
    if (schedule_[i].id == schedule_[i - 1].id) throw DomainError("duplicate event id in schedule");
  labels_ = segment_labels(schedule_, segment_count_, segment_len);
  members_.resize(segment_count_);
  for (const VehicleEvent& ev : schedule_)
    members_[segment_of(ev.cpa_time, segment_len)].push_back(ev.id);
}

std::vector<std::uint32_t> SegmentRenderer::audible_events(std::size_t segment_index) const {
  const auto lo = static_cast<std::int64_t>(segment_index * segment_samples_);
  const auto hi = lo + static_cast<std::int64_t>(segment_samples_);
  std::vector<std::uint32_t> ids;
  for (const VehicleEvent& ev : schedule_) {
    const std::int64_t s0 = event_window_start(ev);
    if (s0 < hi && s0 + kEventWindowSamples > lo) ids.push_back(ev.id);
  }
  return ids;
}

void SegmentRenderer::ensure_rendered(const std::vector<std::uint32_t>& ids) {
  std::vector<std::uint32_t> missing;
  for (std::uint32_t id : ids)
    if (!cache_.contains(id)) missing.push_back(id);
  if (missing.empty()) return;

  auto find_event = [&](std::uint32_t id) -> const VehicleEvent& {
    return *std::lower_bound(schedule_.begin(), schedule_.end(), id,
                             [](const VehicleEvent& e, std::uint32_t v) { return e.id < v; });
  };
  std::vector<std::shared_ptr<const EventRendering>> results(missing.size());
  std::vector<std::exception_ptr> errors(missing.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < missing.size(); i = next++) {
      try {
        const VehicleEvent& ev = find_event(missing[i]);
        results[i] = std::make_shared<const EventRendering>(
            render_event(ev, settings_, event_render_seed(seed_, ev.id)));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n_threads = std::min<unsigned>(workers_, static_cast<unsigned>(missing.size()));
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(work);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t i = 0; i < missing.size(); ++i) cache_[missing[i]] = results[i];
}

LabeledSegment SegmentRenderer::render(std::size_t segment_index) {
  if (segment_index >= segment_count_) throw DomainError("segment index out of range");
  const auto lo = static_cast<std::int64_t>(segment_index * segment_samples_);

  // Drop renderings that end before this segment.
  for (auto it = cache_.begin(); it != cache_.end();) {
    if (it->second->end_sample() <= lo)
      it = cache_.erase(it);
    else
      ++it;
  }

  // Render ahead so that workers stay busy across segment boundaries.
  std::vector<std::uint32_t> wanted = audible_events(segment_index);
  const std::vector<std::uint32_t> needed = wanted;
  for (std::size_t k = segment_index + 1; k < std::min(segment_count_, segment_index + workers_); ++k)
    for (std::uint32_t id : audible_events(k)) wanted.push_back(id);
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
  ensure_rendered(wanted);

  LabeledSegment seg;
  seg.segment_index = segment_index;
  seg.label = labels_[segment_index];
  seg.provenance = members_[segment_index];
  seg.audio = MultichannelAudio(settings_.array.size(), segment_samples_, features::kDatasetRate);
  for (std::uint32_t id : needed) mix_into(seg.audio, lo, *cache_.at(id));
  return seg;
}

}  // namespace avc::traffic
