#include <doctest.h>

#include <cmath>
#include <random>

#include "jetvtol/thrust_estimator.hpp"
#include "oracles.hpp"

using namespace jetvtol;

namespace {

struct Truth {
  JetState jet;
  double bias = 0.0;
};

// Discrete truth matching the filter's process model: one semi-implicit
// Euler step plus white acceleration noise, bias random walk.
void advance_truth(Truth& t, double u, const JetCoefficients& k, const ThrustEstimatorConfig& cfg, double dt,
                   std::mt19937_64* rng) {
  t.jet = jet_step(t.jet, u, k, dt);
  if (rng == nullptr) return;
  std::normal_distribution<double> g;
  const double w = cfg.accel_noise_std / std::sqrt(dt) * g(*rng);
  t.jet.thrust_rate += dt * w;
  t.jet.thrust += dt * dt * w;
  t.bias += cfg.bias_walk_std * std::sqrt(dt) * g(*rng);
}

struct Readings {
  FtReading ft;
  RpmReading rpm;
};

Readings measure(const Truth& t, const JetMount& mount, const RpmMap& map, double ft_std, double rpm_std,
                 std::mt19937_64* rng) {
  std::normal_distribution<double> g;
  Readings r;
  const double ft_noise = rng ? ft_std * g(*rng) : 0.0;
  r.ft.force = (t.jet.thrust + t.bias + ft_noise) * mount.thrust_axis_local;
  r.ft.torque = Vec3(0.3, -0.2, 0.1);
  const double rpm_noise = rng ? rpm_std * g(*rng) : 0.0;
  r.rpm.rpm = std::clamp(map.rpm_for_thrust(t.jet.thrust) + rpm_noise, 0.0, map.max_rpm);
  return r;
}

double throttle_at(double time) {
  static const double levels[] = {55.0, 70.0, 40.0, 60.0, 50.0};
  return levels[static_cast<int>(time / 6.0) % 5];
}

}  // namespace

TEST_CASE("ft_to_thrust_intensity examples") {
  const RobotModel m = reference_robot_model();
  const JetMount& mount = m.jets[0];
  FtReading r;
  r.force = 100.0 * mount.thrust_axis_local;
  CHECK(ft_to_thrust_intensity(r, mount) == doctest::Approx(100.0));
  r.force = mount.thrust_axis_local.unitOrthogonal() * 50.0;
  CHECK(std::abs(ft_to_thrust_intensity(r, mount)) < 1e-12);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 50.0);
  for (int i = 0; i < 50; ++i) {
    r.force = Vec3(g(rng), g(rng), g(rng));
    r.torque = Vec3(g(rng), g(rng), g(rng));
    const Vec3 a = mount.thrust_axis_local;
    const double dot = r.force.x() * a.x() + r.force.y() * a.y() + r.force.z() * a.z();
    CHECK(ft_to_thrust_intensity(r, mount) == doctest::Approx(dot).epsilon(1e-12));
  }
}

TEST_CASE("rpm_to_thrust examples") {
  const RpmMap map;
  CHECK(rpm_to_thrust({0.0}, map) == 0.0);
  CHECK(rpm_to_thrust({map.max_rpm}, map) == doctest::Approx(250.0).epsilon(1e-12));
  CHECK(rpm_to_thrust({60000.0}, map) == doctest::Approx(250.0 * 60000.0 * 60000.0 / (130000.0 * 130000.0)));
  RpmMap hot = map;
  hot.k2 *= 2.0;
  CHECK(rpm_to_thrust({map.max_rpm}, hot) == 250.0);
}

TEST_CASE("thrust estimate: fixed point at equilibrium") {
  const RobotModel m = reference_robot_model();
  const auto k = reference_jet_coefficients();
  const RpmMap map;
  const ThrustEstimatorConfig cfg;
  const double u = 55.0;
  Truth t{{k.equilibrium_thrust(u), 0.0}, 0.0};
  auto belief = cfg.initial_belief(t.jet.thrust);
  const Readings r = measure(t, m.jets[2], map, 0.0, 0.0, nullptr);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const auto s = thrust_estimate_step(belief, u, r.ft, r.rpm, m.jets[2], k, map, cfg, 0.01);
    belief = s.belief;
    worst = std::max(worst, std::abs(s.thrust - t.jet.thrust));
  }
  CHECK(worst < 0.1);
}

TEST_CASE("thrust estimate: noiseless sensors converge within 0.5 N after 1 s") {
  const RobotModel m = reference_robot_model();
  const auto k = reference_jet_coefficients();
  const RpmMap map;
  const ThrustEstimatorConfig cfg;
  Truth t{{k.equilibrium_thrust(55.0), 0.0}, 0.0};
  auto belief = cfg.initial_belief(t.jet.thrust + 8.0);
  double worst = 0.0;
  for (int i = 0; i < 3000; ++i) {
    const double u = throttle_at(i * 0.01);
    advance_truth(t, u, k, cfg, 0.01, nullptr);
    const Readings r = measure(t, m.jets[0], map, 0.0, 0.0, nullptr);
    const auto s = thrust_estimate_step(belief, u, r.ft, r.rpm, m.jets[0], k, map, cfg, 0.01);
    belief = s.belief;
    if (i >= 100) worst = std::max(worst, std::abs(s.thrust - t.jet.thrust));
  }
  CHECK(worst < 0.5);
}

TEST_CASE("thrust estimate: FT bias of 5 N is recovered within 1 N") {
  const RobotModel m = reference_robot_model();
  const auto k = reference_jet_coefficients();
  const RpmMap map;
  const ThrustEstimatorConfig cfg;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    Truth t{{k.equilibrium_thrust(55.0), 0.0}, 5.0};
    auto belief = cfg.initial_belief(t.jet.thrust);
    for (int i = 0; i < 6000; ++i) {
      const double u = throttle_at(i * 0.01);
      t.jet = jet_step(t.jet, u, k, 0.01);
      const Readings r = measure(t, m.jets[1], map, cfg.ft_noise_std, cfg.rpm_noise_std, &rng);
      belief = thrust_estimate_step(belief, u, r.ft, r.rpm, m.jets[1], k, map, cfg, 0.01).belief;
    }
    CHECK(std::abs(belief.mean(2) - 5.0) < 1.0);
  }
}

TEST_CASE("thrust estimate: error RMS within twice the better channel noise") {
  const RobotModel m = reference_robot_model();
  const auto k = reference_jet_coefficients();
  const RpmMap map;
  const ThrustEstimatorConfig cfg;
  std::mt19937_64 rng(101);
  Truth t{{k.equilibrium_thrust(55.0), 0.0}, 3.0};
  auto belief = cfg.initial_belief(t.jet.thrust);
  double se = 0.0;
  int count = 0;
  for (int i = 0; i < 3000; ++i) {
    const double u = throttle_at(i * 0.01);
    advance_truth(t, u, k, cfg, 0.01, &rng);
    const Readings r = measure(t, m.jets[3], map, cfg.ft_noise_std, cfg.rpm_noise_std, &rng);
    const auto s = thrust_estimate_step(belief, u, r.ft, r.rpm, m.jets[3], k, map, cfg, 0.01);
    belief = s.belief;
    if (i >= 200) {
      se += (s.thrust - t.jet.thrust) * (s.thrust - t.jet.thrust);
      ++count;
    }
  }
  CHECK(std::sqrt(se / count) <= 2.0 * cfg.ft_noise_std);
}

TEST_CASE("thrust estimate: per-channel NIS consistent over 50 runs") {
  const RobotModel m = reference_robot_model();
  const auto k = reference_jet_coefficients();
  const RpmMap map;
  const ThrustEstimatorConfig cfg;
  const int runs = 50, steps = 1000;
  std::vector<double> nis_ft(steps, 0.0), nis_rpm(steps, 0.0);
  std::mt19937_64 rng(202);
  std::normal_distribution<double> g;
  for (int run = 0; run < runs; ++run) {
    const auto b0 = cfg.initial_belief(k.equilibrium_thrust(55.0));
    Truth t;
    t.jet.thrust = b0.mean(0) + cfg.initial_thrust_std * g(rng);
    t.jet.thrust_rate = cfg.initial_rate_std * g(rng);
    t.bias = cfg.initial_bias_std * g(rng);
    auto belief = b0;
    for (int i = 0; i < steps; ++i) {
      const double u = throttle_at(i * 0.01);
      advance_truth(t, u, k, cfg, 0.01, &rng);
      const Readings r = measure(t, m.jets[0], map, cfg.ft_noise_std, cfg.rpm_noise_std, &rng);
      const auto s = thrust_estimate_step(belief, u, r.ft, r.rpm, m.jets[0], k, map, cfg, 0.01);
      belief = s.belief;
      nis_ft[static_cast<std::size_t>(i)] += s.nis_ft / runs;
      nis_rpm[static_cast<std::size_t>(i)] += s.nis_rpm / runs;
    }
  }
  const double lo = oracle::chi2_quantile(runs, 0.025) / runs;
  const double hi = oracle::chi2_quantile(runs, 0.975) / runs;
  int in_ft = 0, in_rpm = 0;
  for (int i = 0; i < steps; ++i) {
    in_ft += nis_ft[static_cast<std::size_t>(i)] >= lo && nis_ft[static_cast<std::size_t>(i)] <= hi;
    in_rpm += nis_rpm[static_cast<std::size_t>(i)] >= lo && nis_rpm[static_cast<std::size_t>(i)] <= hi;
  }
  CHECK(in_ft >= 0.9 * steps);
  CHECK(in_rpm >= 0.9 * steps);
}

TEST_CASE("thrust estimate ignores FT torque") {
  const RobotModel m = reference_robot_model();
  const auto k = reference_jet_coefficients();
  const RpmMap map;
  const ThrustEstimatorConfig cfg;
  FtReading a;
  a.force = 120.0 * m.jets[0].thrust_axis_local;
  FtReading b = a;
  b.torque = Vec3(10.0, -7.0, 3.0);
  const auto belief = cfg.initial_belief(110.0);
  const auto sa = thrust_estimate_step(belief, 50.0, a, {90000.0}, m.jets[0], k, map, cfg, 0.01);
  const auto sb = thrust_estimate_step(belief, 50.0, b, {90000.0}, m.jets[0], k, map, cfg, 0.01);
  CHECK((sa.belief.mean - sb.belief.mean).norm() == 0.0);
}

TEST_CASE("ThrustEstimator runs four independent filters") {
  const RobotModel m = reference_robot_model();
  const auto k = reference_jet_coefficients();
  const RpmMap map;
  ThrustEstimator est(m, k, map, {}, Vec4(100, 100, 100, 100));
  std::array<FtReading, 4> ft;
  std::array<RpmReading, 4> rpm;
  for (int i = 0; i < 4; ++i) {
    ft[static_cast<std::size_t>(i)].force = (90.0 + 10.0 * i) * m.jets[static_cast<std::size_t>(i)].thrust_axis_local;
    rpm[static_cast<std::size_t>(i)].rpm = map.rpm_for_thrust(90.0 + 10.0 * i);
  }
  ThrottleCommand u;
  u.u = Vec4::Constant(50.0);
  for (int i = 0; i < 200; ++i) est.step(u, ft, rpm, 0.01);
  for (int i = 0; i < 3; ++i) CHECK(est.estimate().thrust(i + 1) > est.estimate().thrust(i));
  CHECK((est.estimate().cov_trace.array() > 0.0).all());
}
