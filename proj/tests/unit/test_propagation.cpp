#include <doctest.h>

#include <random>

#include "avc/propagation.hpp"
#include "avc/source_synthesis.hpp"
#include "oracle.hpp"

using namespace avc;
using namespace avc::prop;

namespace {

Environment dry_env() {
  Environment env;
  env.ground_reflection_coeff = 0.0;
  env.air_absorption = false;
  return env;
}

ArrayGeometry single_mic(Vec3 p) { return ArrayGeometry{{p}}; }

// Nearly static source: a velocity this small moves it by nanometres.
Trajectory parked(Vec3 at, double duration) {
  Trajectory t;
  t.start_point = at;
  t.velocity = {1e-9, 0.0, 0.0};
  t.duration = duration;
  return t;
}

struct Partial {
  double f, amp, phase;
};

std::vector<Partial> random_partials(std::uint64_t seed, int count, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> f(lo, hi), a(0.2, 1.0), p(0.0, 2.0 * oracle::kPi);
  std::vector<Partial> out;
  for (int i = 0; i < count; ++i) out.push_back({f(rng), a(rng), p(rng)});
  return out;
}

double eval(const std::vector<Partial>& ps, double t) {
  double s = 0.0;
  for (const auto& p : ps) s += p.amp * std::sin(2.0 * oracle::kPi * p.f * t + p.phase);
  return s;
}

std::vector<double> render(const std::vector<Partial>& ps, std::size_t n, double fs) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = eval(ps, static_cast<double>(i) / fs);
  return x;
}

double rms_db(std::span<const double> x) { return oracle::db(oracle::mean_square(x)); }

}  // namespace

TEST_CASE("make_trajectory examples") {
  const auto t = make_trajectory(5.75, Direction::LeftToRight, 72.0, 30.0);
  CHECK(t.velocity.x == doctest::Approx(20.0));
  CHECK(t.velocity.y == 0.0);
  CHECK(t.velocity.z == 0.0);
  CHECK(t.position(15.0).x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(t.position(15.0).y == 5.75);
  CHECK(t.position(0.0).z == 0.0);
  CHECK((t.position(30.0) - t.position(0.0)).norm() == doctest::Approx(600.0));

  const auto r = make_trajectory(9.25, Direction::RightToLeft, 36.0, 30.0);
  CHECK(r.velocity.x == doctest::Approx(-10.0));
  CHECK(r.position(15.0).x == doctest::Approx(0.0).epsilon(1e-12));

  const auto off = make_trajectory(5.75, Direction::LeftToRight, 72.0, 30.0, 3.0, 12.0);
  CHECK(off.position(12.0).x == doctest::Approx(3.0));

  CHECK_THROWS_AS(make_trajectory(0.0, Direction::LeftToRight, 50.0, 30.0), DomainError);
  CHECK_THROWS_AS(make_trajectory(5.0, Direction::LeftToRight, 0.0, 30.0), DomainError);
}

TEST_CASE("default array: 4 collinear mics, 0.24 m aperture at y = 0, z = 2.7") {
  const auto a = ArrayGeometry::default_linear();
  REQUIRE(a.size() == 4);
  CHECK(a.mic_positions.back().x - a.mic_positions.front().x == doctest::Approx(0.24));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.mic_positions[i].y == 0.0);
    CHECK(a.mic_positions[i].z == 2.7);
    if (i > 0)
      CHECK(a.mic_positions[i].x - a.mic_positions[i - 1].x == doctest::Approx(0.08));
  }
  CHECK(a.centroid().x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(ArrayGeometry::uniform_linear(1, 0.2, 1.0), DomainError);
}

TEST_CASE("air absorption agrees with an independent ISO 9613-1 evaluation") {
  for (const auto& p : oracle::kIsoPoints) {
    Environment env;
    env.temperature = p.temp_c;
    env.relative_humidity = p.rh;
    env.pressure_kpa = p.kpa;
    CHECK(air_absorption_db_per_m(p.f, env) == doctest::Approx(p.alpha).epsilon(1e-9));
  }
}

TEST_CASE("air absorption matches the published octave table at 20 degC, 70 % RH") {
  Environment env;
  env.relative_humidity = 70.0;
  for (int k = 0; k < 8; ++k) {
    const double fm = 1000.0 * std::pow(10.0, 0.3 * (k - 4));  // exact midband 63 ... 8k
    // table entries are rounded to 0.1 dB/km
    CHECK(std::abs(air_absorption_db_per_m(fm, env) * 1000.0 - oracle::kIsoTable20C70[k]) <= 0.05 + 1e-9);
  }
}

TEST_CASE("air absorption examples and range") {
  const Environment env;
  const double a1k = air_absorption_db_per_m(1000.0, env);
  CHECK(a1k >= 0.004);
  CHECK(a1k <= 0.007);
  CHECK(air_absorption_db_per_m(4000.0, env) > a1k);
  double prev = 0.0;
  for (double f = 1000.0; f <= 8000.0; f *= 1.01) {
    const double a = air_absorption_db_per_m(f, env);
    CHECK(a > prev);
    prev = a;
  }
  for (double f = 50.0; f <= 10000.0; f *= 1.1) CHECK(air_absorption_db_per_m(f, env) >= 0.0);
  CHECK_THROWS_AS(air_absorption_db_per_m(49.0, env), DomainError);
  CHECK_THROWS_AS(air_absorption_db_per_m(10001.0, env), DomainError);
}

TEST_CASE("absorption FIR follows the attenuation curve") {
  const Environment env;
  const double fs = 48000.0, r = 100.0;
  const auto h = absorption_fir(r, env, fs);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == doctest::Approx(h[h.size() - 1 - i]));
  auto error_db = [&](double f) {
    std::complex<double> acc = 0.0;
    for (std::size_t m = 0; m < h.size(); ++m)
      acc += h[m] * std::polar(1.0, -2.0 * oracle::kPi * f / fs * static_cast<double>(m));
    return 20.0 * std::log10(std::abs(acc)) + air_absorption_db_per_m(f, env) * r;
  };
  for (double f : {1000.0, 2000.0, 4000.0, 8000.0}) CHECK(std::abs(error_db(f)) <= 0.1);
  // 65 taps resolve ~740 Hz, so the narrow low-frequency relaxation feature is smeared
  CHECK(std::abs(error_db(125.0)) <= 0.25);
}

TEST_CASE("Newton emission time solves the retarded-time equation") {
  const auto traj = make_trajectory(5.75, Direction::LeftToRight, 100.0, 30.0);
  const Vec3 mic{0.12, 0.0, 2.7};
  const double c = 343.0;
  for (double t : {0.5, 10.0, 15.0, 15.02, 29.0}) {
    const auto s = solve_emission_time(traj, 0.3, mic, t, c, t);
    const Vec3 src = traj.position(s.emission_time) + Vec3{0.0, 0.0, 0.3};
    CHECK((src - mic).norm() == doctest::Approx(c * (t - s.emission_time)).epsilon(1e-12));
    CHECK(s.distance == doctest::Approx((src - mic).norm()).epsilon(1e-12));
    CHECK(s.iterations <= 4);
  }
}

TEST_CASE("simulated samples equal Newton retarded time plus sinc interpolation") {
  const double fs = 48000.0;
  const auto traj = make_trajectory(5.75, Direction::RightToLeft, 90.0, 2.0);
  const auto array = ArrayGeometry::default_linear();
  const auto x = oracle::white_noise(static_cast<std::size_t>(2.0 * fs), 4);
  const auto y = simulate_moving_source(x, traj, 0.3, array, dry_env(), fs);
  const auto& interp = SincInterpolator::instance();
  for (std::size_t m : {0u, 3u})
    for (std::size_t i : {3000u, 48000u, 90000u}) {
      const double t = static_cast<double>(i) / fs;
      const auto s = solve_emission_time(traj, 0.3, array.mic_positions[m], t, 343.0, t);
      const double expect = interp(x, s.emission_time * fs) / s.distance;
      CHECK(y.channels[m][i] == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("static source: delayed by r/c and scaled by 1/r") {
  const double fs = 48000.0, dur = 2.0;
  const auto ps = random_partials(17, 40, 50.0, 5000.0);
  const auto x = render(ps, static_cast<std::size_t>(dur * fs), fs);
  const Vec3 mic{0.0, 0.0, 2.7};
  const auto y = simulate_moving_source(x, parked({0.0, 10.0, 0.0}, dur), 2.7, single_mic(mic),
                                        dry_env(), fs);
  const double delay = 10.0 / 343.0;
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 4800; i < y.frames() - 4800; ++i) {
    const double expect = eval(ps, static_cast<double>(i) / fs - delay) / 10.0;
    err += (y.channels[0][i] - expect) * (y.channels[0][i] - expect);
    ref += expect * expect;
  }
  CHECK(oracle::db(err / ref) <= -40.0);
}

TEST_CASE("doubling the distance of a static source drops the level by 6.02 dB") {
  const double fs = 48000.0, dur = 1.0;
  const auto x = render(random_partials(8, 40, 50.0, 5000.0), static_cast<std::size_t>(dur * fs), fs);
  const Vec3 mic{0.0, 0.0, 1.0};
  auto level = [&](double r) {
    const auto y = simulate_moving_source(x, parked({0.0, r, 0.0}, dur), 1.0, single_mic(mic),
                                          dry_env(), fs);
    return rms_db(std::span<const double>(y.channels[0]).subspan(4800));
  };
  CHECK(std::abs(level(5.0) - level(10.0) - 6.0206) <= 0.2);
  CHECK(std::abs(level(10.0) - level(20.0) - 6.0206) <= 0.2);
}

TEST_CASE("Doppler shift of a head-on 1 kHz tone at 20 m/s") {
  const double fs = 48000.0, dur = 4.0, c = 343.0;
  const auto x = oracle::tone(static_cast<std::size_t>(dur * fs), fs, 1000.0);
  Trajectory t;
  t.start_point = {0.0, 5.0, 0.0};
  t.velocity = {20.0, 0.0, 0.0};
  t.duration = dur;
  auto ridge = [&](const Vec3& mic) {
    const auto y = simulate_moving_source(x, t, 1.0, single_mic(mic), dry_env(), fs);
    const auto frame = std::span<const double>(y.channels[0]).subspan(2 * 48000, 16384);
    return oracle::peak_frequency(frame, fs, 850.0, 1150.0);
  };
  const double approach = ridge({200.0, 5.0, 1.0});
  const double recede = ridge({-50.0, 5.0, 1.0});
  CHECK(std::abs(approach / (1000.0 * c / (c - 20.0)) - 1.0) < 0.005);
  CHECK(std::abs(recede / (1000.0 * c / (c + 20.0)) - 1.0) < 0.005);
  // head-on the radial speed is exactly v, so the shift is much tighter
  CHECK(std::abs(approach / (1000.0 * c / (c - 20.0)) - 1.0) < 1e-4);
}

TEST_CASE("pass-by level peaks within 0.5 s of the CPA") {
  const double fs = 48000.0;
  const auto sources = synth::build_vehicle_sources(VehicleClass::Car, 72.0, 30.0, fs, 3);
  const auto traj = make_trajectory(5.75, Direction::LeftToRight, 72.0, 30.0);
  const auto rec = simulate_passby(sources, traj, ArrayGeometry::default_linear(), Environment{});
  REQUIRE(rec.audio.channel_count() == 4);
  CHECK(rec.audio.frames() == 30 * 48000);
  const std::size_t win = 4800;  // 0.1 s
  double best = -1.0;
  std::size_t best_i = 0;
  for (std::size_t start = 0; start + win <= rec.audio.frames(); start += win) {
    const double e = oracle::mean_square(std::span<const double>(rec.audio.channels[1]).subspan(start, win));
    if (e > best) {
      best = e;
      best_i = start;
    }
  }
  const double t_peak = (static_cast<double>(best_i) + win / 2.0) / fs;
  CHECK(std::abs(t_peak - 15.0) <= 0.5);
}

TEST_CASE("muting the upper source equals the lower-source-only simulation exactly") {
  const double fs = 48000.0;
  auto sources = synth::build_vehicle_sources(VehicleClass::CommercialVehicle, 60.0, 4.0, fs, 21);
  std::fill(sources.hs_signal.begin(), sources.hs_signal.end(), 0.0);
  const auto traj = make_trajectory(9.25, Direction::RightToLeft, 60.0, 4.0);
  const auto array = ArrayGeometry::default_linear();
  const Environment env;
  const auto both = simulate_passby(sources, traj, array, env);
  const auto ls = simulate_moving_source(sources.ls_signal, traj, sources.ls_height, array, env, fs,
                                         sources.start_time);
  for (std::size_t m = 0; m < 4; ++m) CHECK(both.audio.channels[m] == ls.channels[m]);
}

TEST_CASE("near-microphone guard") {
  const double fs = 48000.0;
  const auto x = oracle::white_noise(48000, 1);
  Trajectory t;
  t.velocity = {10.0, 0.0, 0.0};
  t.duration = 1.0;
  // source at mic height, 5 cm beside the mic line
  t.start_point = {-10.0, 0.05, 0.0};
  CHECK_THROWS_AS(simulate_moving_source(x, t, 2.7, ArrayGeometry::default_linear(), Environment{}, fs),
                  DomainError);
  t.start_point = {-10.0, 0.5, 0.0};
  CHECK_NOTHROW(simulate_moving_source(x, t, 2.7, ArrayGeometry::default_linear(), Environment{}, fs));
}

TEST_CASE("input validation") {
  const double fs = 48000.0;
  const auto x = oracle::white_noise(1000, 1);
  const auto traj = make_trajectory(5.75, Direction::LeftToRight, 50.0, 1.0);
  CHECK_THROWS_AS(simulate_moving_source(x, traj, 0.3, ArrayGeometry::default_linear(), Environment{}, fs),
                  DomainError);
  const auto long_x = oracle::white_noise(48000, 1);
  CHECK_THROWS_AS(simulate_moving_source(long_x, traj, -0.1, ArrayGeometry::default_linear(), Environment{}, fs),
                  DomainError);
  Environment bad;
  bad.ground_reflection_coeff = 1.5;
  CHECK_THROWS_AS(simulate_moving_source(long_x, traj, 0.3, ArrayGeometry::default_linear(), bad, fs),
                  DomainError);
  bad = Environment{};
  bad.speed_of_sound = 0.0;
  CHECK_THROWS_AS(bad.validate(), DomainError);
}
