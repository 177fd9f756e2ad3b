#pragma once

// Hand-rolled random generators for the property suite. Every case draws
// from its own engine seeded by (suite seed, case index), so a failure is
// reproduced by rerunning that single case.

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "avc/core.hpp"
#include "avc/evaluation.hpp"
#include "avc/traffic.hpp"

namespace gen {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }
  std::uint64_t seed() { return rng_(); }
  std::mt19937_64& engine() { return rng_; }

  avc::VehicleClass vehicle_class() { return coin() ? avc::VehicleClass::Car : avc::VehicleClass::CommercialVehicle; }
  avc::Direction direction() { return coin() ? avc::Direction::LeftToRight : avc::Direction::RightToLeft; }

  // Hourly rates with a mix of idle, light and heavy hours; a lane stays
  // under the 1000/h cap with both classes at their maximum.
  avc::traffic::TrafficProfile profile() {
    avc::traffic::TrafficProfile p;
    for (auto& per_class : p.hourly_rate)
      for (auto& hours : per_class)
        for (double& r : hours) {
          const double u = uniform(0.0, 1.0);
          r = u < 0.2 ? 0.0 : u < 0.7 ? uniform(0.0, 60.0) : uniform(60.0, 480.0);
        }
    p.speed_mean = uniform(40.0, 90.0);
    p.speed_std = uniform(1.0, 20.0);
    return p;
  }

  // Non-negative integer counts, mostly small.
  avc::eval::CountVector counts() {
    avc::eval::CountVector v{};
    for (auto& c : v) c = static_cast<std::uint32_t>(coin(0.3) ? 0 : integer(0, 12));
    return v;
  }

  // Prediction scattered around `label`: exact, slightly off, or far off.
  avc::eval::CountPrediction prediction_near(const avc::eval::CountVector& label) {
    avc::eval::CountPrediction p{};
    for (std::size_t c = 0; c < p.size(); ++c) {
      const double u = uniform(0.0, 1.0);
      const double base = static_cast<double>(label[c]);
      p[c] = u < 0.5 ? base + uniform(-0.49, 0.49) : u < 0.8 ? base + uniform(-2.5, 2.5) : uniform(-3.0, 20.0);
    }
    return p;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), rng_);
  }

 private:
  std::mt19937_64 rng_;
};

inline Gen for_case(std::uint64_t suite, int index) {
  return Gen(avc::mix_seed(suite, static_cast<std::uint64_t>(index)));
}

}  // namespace gen
