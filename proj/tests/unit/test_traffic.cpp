#include <doctest.h>

#include <numeric>

#include "avc/traffic.hpp"

using namespace avc;
using namespace avc::traffic;

namespace {

VehicleEvent event(std::uint32_t id, VehicleClass c, Direction d, double speed, double cpa) {
  VehicleEvent e;
  e.id = id;
  e.vehicle_class = c;
  e.direction = d;
  e.speed_kmh = speed;
  e.cpa_time = cpa;
  return e;
}

RenderSettings fast_settings() {
  RenderSettings s;
  s.simulation_rate = 32000.0;
  return s;
}

double max_abs(const MultichannelAudio& a) {
  double m = 0.0;
  for (const auto& ch : a.channels)
    for (double v : ch) m = std::max(m, std::abs(v));
  return m;
}

// Timeline with one rendering added at its window, built without render_timeline.
MultichannelAudio padded(const EventRendering& r, std::size_t frames) {
  MultichannelAudio out(r.audio.channel_count(), frames, 16000.0);
  for (std::size_t c = 0; c < out.channel_count(); ++c)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(frames); ++i) {
      const std::int64_t k = i - r.start_sample;
      if (k >= 0 && k < static_cast<std::int64_t>(r.audio.frames()))
        out.channels[c][static_cast<std::size_t>(i)] = r.audio.channels[c][static_cast<std::size_t>(k)];
    }
  return out;
}

}  // namespace

TEST_CASE("zero profile gives an empty schedule") {
  TrafficProfile p;
  CHECK(sample_schedule(p, 3600.0 * 5, 1).empty());
}

TEST_CASE("Poisson counts: 360/h over 100 seeds") {
  const auto p = TrafficProfile::constant(VehicleClass::Car, Direction::LeftToRight, 360.0);
  std::vector<double> counts;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = sample_schedule(p, 3600.0, seed);
    for (const auto& e : s) {
      CHECK(e.vehicle_class == VehicleClass::Car);
      CHECK(e.direction == Direction::LeftToRight);
    }
    counts.push_back(static_cast<double>(s.size()));
  }
  const double mean = std::accumulate(counts.begin(), counts.end(), 0.0) / 100.0;
  CHECK(std::abs(mean - 360.0) <= 3.0 * std::sqrt(360.0));
  double var = 0.0;
  for (double c : counts) var += (c - mean) * (c - mean);
  var /= 99.0;
  // sample variance of 100 Poisson draws: relative sd about sqrt(2/99)
  CHECK(var / 360.0 > 0.6);
  CHECK(var / 360.0 < 1.4);
}

TEST_CASE("schedule is deterministic per seed and well formed") {
  TrafficProfile p;
  for (int h = 0; h < 24; ++h) {
    p.rate(VehicleClass::Car, Direction::LeftToRight, h) = 100.0 + 10.0 * h;
    p.rate(VehicleClass::Car, Direction::RightToLeft, h) = 80.0;
    p.rate(VehicleClass::CommercialVehicle, Direction::LeftToRight, h) = 20.0;
    p.rate(VehicleClass::CommercialVehicle, Direction::RightToLeft, h) = h < 12 ? 0.0 : 30.0;
  }
  const auto a = sample_schedule(p, 2 * 3600.0, 42, 10);
  const auto b = sample_schedule(p, 2 * 3600.0, 42, 10);
  const auto c = sample_schedule(p, 2 * 3600.0, 43, 10);
  CHECK(a == b);
  CHECK(a != c);
  REQUIRE(!a.empty());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == i);
    if (i > 0) CHECK(a[i].cpa_time >= a[i - 1].cpa_time);
    CHECK(a[i].cpa_time >= 0.0);
    CHECK(a[i].cpa_time < 7200.0);
    CHECK(a[i].speed_kmh >= kMinSpeedKmh);
    CHECK(a[i].speed_kmh <= kMaxSpeedKmh);
  }
  // hours 10 and 11 carry no CV r2l traffic
  for (const auto& e : a)
    CHECK_FALSE((e.vehicle_class == VehicleClass::CommercialVehicle && e.direction == Direction::RightToLeft));
  // the first hour of a schedule does not depend on its length
  const auto one = sample_schedule(p, 3600.0, 42, 10);
  std::vector<VehicleEvent> head;
  for (const auto& e : a)
    if (e.cpa_time < 3600.0) head.push_back(e);
  REQUIRE(head.size() == one.size());
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(head[i].cpa_time == one[i].cpa_time);
}

TEST_CASE("schedule preconditions") {
  const auto p = TrafficProfile::constant(VehicleClass::Car, Direction::LeftToRight, 10.0);
  CHECK_THROWS_AS(sample_schedule(p, 90.0, 1), DomainError);
  CHECK_THROWS_AS(sample_schedule(p, 60.0, 1, 24), DomainError);
  CHECK_NOTHROW(sample_schedule(p, 60.0, 1, 23));
}

TEST_CASE("speed distribution: truncated normal") {
  auto p = TrafficProfile::constant(VehicleClass::Car, Direction::LeftToRight, 900.0);
  p.speed_mean = 95.0;
  p.speed_std = 20.0;
  const auto s = sample_schedule(p, 3 * 3600.0, 5);
  double sum = 0.0;
  for (const auto& e : s) {
    CHECK(e.speed_kmh >= 30.0);
    CHECK(e.speed_kmh <= 100.0);
    sum += e.speed_kmh;
  }
  // mean of N(95, 20) truncated to [30, 100]
  const double a = (30.0 - 95.0) / 20.0, b = (100.0 - 95.0) / 20.0;
  auto phi = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846); };
  auto Phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  const double expect = 95.0 + 20.0 * (phi(a) - phi(b)) / (Phi(b) - Phi(a));
  CHECK(sum / static_cast<double>(s.size()) == doctest::Approx(expect).epsilon(0.01));
}

TEST_CASE("profile validation and JSON") {
  auto p = TrafficProfile::constant(VehicleClass::Car, Direction::LeftToRight, 600.0);
  CHECK_NOTHROW(p.validate());
  p.rate(VehicleClass::CommercialVehicle, Direction::LeftToRight, 3) = 401.0;
  CHECK_THROWS_AS(p.validate(), DomainError);
  p.rate(VehicleClass::CommercialVehicle, Direction::LeftToRight, 3) = -1.0;
  CHECK_THROWS_AS(p.validate(), DomainError);

  const auto q = TrafficProfile::parse(R"({"hourly_rate": {"car_l2r": 12, "cv_r2l": [0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19,20,21,22,23]},
      "speed_mean_kmh": 70, "speed_std_kmh": 5, "lanes": {"near_y": 6.0, "far_y": 10.0}})");
  CHECK(q.rate(VehicleClass::Car, Direction::LeftToRight, 17) == 12.0);
  CHECK(q.rate(VehicleClass::Car, Direction::RightToLeft, 17) == 0.0);
  CHECK(q.rate(VehicleClass::CommercialVehicle, Direction::RightToLeft, 7) == 7.0);
  CHECK(q.speed_mean == 70.0);
  CHECK(q.lanes.far_lane_y == 10.0);
  const auto r = TrafficProfile::parse(q.to_json());
  CHECK(r.hourly_rate == q.hourly_rate);
  CHECK(r.speed_std == q.speed_std);

  CHECK_THROWS_AS(TrafficProfile::parse("{"), ConfigError);
  CHECK_THROWS_AS(TrafficProfile::parse(R"({"hourly_rate": {"bus_l2r": 1}})"), ConfigError);
  CHECK_THROWS_AS(TrafficProfile::parse(R"({"hourly_rate": {"car_l2r": [1, 2]}})"), ConfigError);
  CHECK_THROWS_AS(TrafficProfile::parse(R"({"speed": 3})"), ConfigError);
  CHECK_THROWS_AS(TrafficProfile::parse(R"({"hourly_rate": {"car_l2r": 1200}})"), ConfigError);
  CHECK_THROWS_AS(TrafficProfile::load("/nonexistent/profile.json"), IoError);
}

TEST_CASE("segment assignment and the boundary tie rule") {
  CHECK(segment_of(0.0) == 0);
  CHECK(segment_of(59.999) == 0);
  CHECK(segment_of(60.0) == 1);
  CHECK(segment_of(119.5) == 1);
  CHECK_THROWS_AS(segment_of(-0.1), DomainError);

  const std::vector<VehicleEvent> s{
      event(0, VehicleClass::Car, Direction::LeftToRight, 80, 10.0),
      event(1, VehicleClass::Car, Direction::RightToLeft, 80, 60.0),
      event(2, VehicleClass::CommercialVehicle, Direction::RightToLeft, 80, 60.0),
      event(3, VehicleClass::Car, Direction::LeftToRight, 80, 179.0)};
  const auto labels = segment_labels(s, 3);
  CHECK(labels[0].counts == std::array<std::uint32_t, 4>{1, 0, 0, 0});
  CHECK(labels[1].counts == std::array<std::uint32_t, 4>{0, 1, 0, 1});
  CHECK(labels[2].counts == std::array<std::uint32_t, 4>{1, 0, 0, 0});
  CHECK_THROWS_AS(segment_labels(s, 2), DomainError);

  for (const auto& l : segment_labels({}, 5)) CHECK(l == SegmentLabel{});
}

TEST_CASE("event window sits on the 16 kHz grid") {
  CHECK(event_window_start(event(0, VehicleClass::Car, Direction::LeftToRight, 80, 15.0)) == 0);
  CHECK(event_window_start(event(0, VehicleClass::Car, Direction::LeftToRight, 80, 20.00003)) == 80000);
  CHECK(event_window_start(event(0, VehicleClass::Car, Direction::LeftToRight, 80, 1.0)) == -224000);
  CHECK(event_render_seed(5, 1) != event_render_seed(5, 2));
  CHECK(event_render_seed(5, 1) != event_render_seed(6, 1));
}

TEST_CASE("render settings validation") {
  RenderSettings s;
  CHECK_NOTHROW(s.validate());
  s.simulation_rate = 44100.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = RenderSettings{};
  s.lanes.near_lane_y = -1.0;
  CHECK_THROWS_AS(s.validate(), DomainError);
}

TEST_CASE("single event: timeline is the zero-padded rendering") {
  const auto settings = fast_settings();
  const std::vector<VehicleEvent> s{event(0, VehicleClass::Car, Direction::LeftToRight, 72, 40.0)};
  const auto timeline = render_timeline(s, settings, 120.0, 9);
  const auto r = render_event(s[0], settings, event_render_seed(9, 0));
  CHECK(r.audio.frames() == 480000);
  CHECK(r.audio.sample_rate == 16000.0);
  CHECK(r.start_sample == 25 * 16000);
  CHECK(max_abs(r.audio) > 0.0);
  const auto expect = padded(r, timeline.frames());
  CHECK(timeline.frames() == 120 * 16000);
  for (std::size_t c = 0; c < 4; ++c) CHECK(timeline.channels[c] == expect.channels[c]);
}

TEST_CASE("edge events contribute their in-range part") {
  const auto settings = fast_settings();
  const std::vector<VehicleEvent> s{event(0, VehicleClass::CommercialVehicle, Direction::RightToLeft, 50, 3.0),
                                    event(1, VehicleClass::Car, Direction::LeftToRight, 90, 59.5)};
  const auto timeline = render_timeline(s, settings, 60.0, 4);
  const auto r0 = render_event(s[0], settings, event_render_seed(4, 0));
  const auto r1 = render_event(s[1], settings, event_render_seed(4, 1));
  CHECK(r0.start_sample < 0);
  CHECK(r1.end_sample() > 60 * 16000);
  auto expect = padded(r0, timeline.frames());
  const auto e1 = padded(r1, timeline.frames());
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < expect.frames(); ++i) expect.channels[c][i] += e1.channels[c][i];
  for (std::size_t c = 0; c < 4; ++c) CHECK(timeline.channels[c] == expect.channels[c]);
}

TEST_CASE("mixing: disjoint windows and simultaneous events") {
  const auto settings = fast_settings();
  const auto a = event(0, VehicleClass::Car, Direction::LeftToRight, 80, 20.0);
  const auto b = event(1, VehicleClass::CommercialVehicle, Direction::RightToLeft, 60, 100.0);
  const auto b_same = event(1, VehicleClass::CommercialVehicle, Direction::RightToLeft, 60, 20.0);
  const std::vector<VehicleEvent> only_a{a}, only_b{b}, only_b_same{b_same}, disjoint{a, b}, together{a, b_same};

  const auto ta = render_timeline(only_a, settings, 120.0, 1);
  const auto tb = render_timeline(only_b, settings, 120.0, 1);
  const auto tab = render_timeline(disjoint, settings, 120.0, 1);
  const auto wa = render_event(a, settings, event_render_seed(1, 0));
  const auto wb = render_event(b, settings, event_render_seed(1, 1));
  auto same_in = [](const MultichannelAudio& x, const MultichannelAudio& y, const EventRendering& w) {
    for (std::size_t c = 0; c < 4; ++c)
      if (!std::equal(x.channels[c].begin() + w.start_sample, x.channels[c].begin() + w.end_sample(),
                      y.channels[c].begin() + w.start_sample))
        return false;
    return true;
  };
  CHECK(same_in(tab, ta, wa));
  CHECK(same_in(tab, tb, wb));

  const auto tbs = render_timeline(only_b_same, settings, 120.0, 1);
  const auto both = render_timeline(together, settings, 120.0, 1);
  const double scale = max_abs(both);
  REQUIRE(scale > 0.0);
  double worst = 0.0;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < both.frames(); ++i)
      worst = std::max(worst, std::abs(both.channels[c][i] - ta.channels[c][i] - tbs.channels[c][i]));
  CHECK(worst <= 1e-6 * scale);
}

TEST_CASE("segment_timeline cuts labeled 60 s pieces") {
  const auto settings = fast_settings();
  const std::vector<VehicleEvent> s{event(0, VehicleClass::Car, Direction::LeftToRight, 80, 50.0),
                                    event(1, VehicleClass::Car, Direction::RightToLeft, 80, 60.0)};
  const auto timeline = render_timeline(s, settings, 120.0, 2);
  const auto segs = segment_timeline(timeline, s);
  REQUIRE(segs.size() == 2);
  CHECK(segs[0].label.counts == std::array<std::uint32_t, 4>{1, 0, 0, 0});
  CHECK(segs[1].label.counts == std::array<std::uint32_t, 4>{0, 1, 0, 0});
  CHECK(segs[0].provenance == std::vector<std::uint32_t>{0});
  CHECK(segs[1].provenance == std::vector<std::uint32_t>{1});
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(segs[k].segment_index == k);
    CHECK(segs[k].audio.frames() == 960000);
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(std::equal(segs[k].audio.channels[c].begin(), segs[k].audio.channels[c].end(),
                       timeline.channels[c].begin() + static_cast<std::ptrdiff_t>(k * 960000)));
  }
  MultichannelAudio odd(4, 16000 * 90, 16000.0);
  CHECK_THROWS_AS(segment_timeline(odd, s), DomainError);
}

TEST_CASE("SegmentRenderer streams the same audio as render_timeline, for any worker count") {
  const auto settings = fast_settings();
  const std::vector<VehicleEvent> s{event(0, VehicleClass::Car, Direction::LeftToRight, 80, 5.0),
                                    event(1, VehicleClass::CommercialVehicle, Direction::RightToLeft, 50, 58.0),
                                    event(2, VehicleClass::Car, Direction::RightToLeft, 100, 61.0),
                                    event(3, VehicleClass::Car, Direction::LeftToRight, 40, 170.0)};
  const auto timeline = render_timeline(s, settings, 180.0, 77);
  for (unsigned workers : {1u, 3u}) {
    SegmentRenderer r(s, settings, 180.0, 77, workers);
    REQUIRE(r.segment_count() == 3);
    CHECK(r.audible_events(0) == std::vector<std::uint32_t>{0, 1, 2});
    CHECK(r.audible_events(1) == std::vector<std::uint32_t>{1, 2});
    CHECK(r.audible_events(2) == std::vector<std::uint32_t>{3});
    for (std::size_t k = 0; k < 3; ++k) {
      const auto seg = r.render(k);
      CHECK(seg.label == r.labels()[k]);
      for (std::size_t c = 0; c < 4; ++c)
        CHECK(std::equal(seg.audio.channels[c].begin(), seg.audio.channels[c].end(),
                         timeline.channels[c].begin() + static_cast<std::ptrdiff_t>(k * 960000)));
    }
    CHECK_THROWS_AS(r.render(3), DomainError);
  }
  auto dup = s;
  dup[1].id = 0;
  CHECK_THROWS_AS(SegmentRenderer(dup, settings, 180.0, 77), DomainError);
  CHECK_THROWS_AS(SegmentRenderer(s, settings, 150.0, 77), DomainError);
}

TEST_CASE("default 48 kHz rendering is finite and audible at CPA") {
  const auto r = render_event(event(0, VehicleClass::Car, Direction::LeftToRight, 80, 15.0), RenderSettings{}, 1);
  CHECK(r.audio.frames() == 480000);
  double centre = 0.0, edge = 0.0;
  for (std::size_t i = 0; i < 16000; ++i) {
    centre += r.audio.channels[0][232000 + i] * r.audio.channels[0][232000 + i];
    edge += r.audio.channels[0][i] * r.audio.channels[0][i];
  }
  CHECK(edge > 0.0);
  CHECK(centre > 10.0 * edge);
  CHECK(std::isfinite(max_abs(r.audio)));
}
