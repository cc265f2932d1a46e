#include <doctest.h>

#include <cmath>
#include <numeric>

#include "jetvtol/sim_world.hpp"

using namespace jetvtol;

namespace {

WorldState airborne(const SimParams& p, double z) {
  WorldState w = standing_world(p, p.model.nominal_posture);
  w.base.position.z() += z;
  return w;
}

double mechanical_energy(const WorldState& w, const SimParams& p) {
  const RobotModel& m = p.model;
  const Vec3 v = truth_com_velocity(w, m);
  const Vec3 om = w.base.ang_velocity;
  return 0.5 * m.mass * v.squaredNorm() + 0.5 * om.dot(m.inertia_body * om) +
         m.weight() * truth_com(w, m).z();
}

}  // namespace

TEST_CASE("contact_force examples") {
  CHECK((contact_force(1e-3, 0.0, 1e5, 200.0) - Vec3(0, 0, 100.0)).norm() < 1e-12);
  CHECK(contact_force(0.0, 5.0, 1e5, 200.0).norm() == 0.0);
  CHECK(contact_force(-1e-3, 5.0, 1e5, 200.0).norm() == 0.0);
  CHECK(contact_force(1e-3, -1.0, 1e5, 200.0).norm() == 0.0);
  // Friction opposes sliding and is capped by mu * N.
  const Vec3 f = contact_force(1e-3, 0.0, 1e5, 0.0, Vec3(2.0, 0.0, 0.0), 0.8, 500.0);
  CHECK(f.z() == doctest::Approx(100.0));
  CHECK(f.x() == doctest::Approx(-80.0));
  const Vec3 slow = contact_force(1e-3, 0.0, 1e5, 0.0, Vec3(0.0, 0.01, 0.0), 0.8, 500.0);
  CHECK(slow.y() == doctest::Approx(-5.0));
}

TEST_CASE("free fall: one step from rest") {
  const SimParams p;
  const WorldState w0 = airborne(p, 2.0);
  const WorldState w1 = world_step(w0, {}, p.model.nominal_posture.angles, p);
  CHECK(truth_com_velocity(w1, p.model).z() == doctest::Approx(-9.81 * 0.001).epsilon(1e-12));
  CHECK(w1.time == doctest::Approx(0.001));
  CHECK(w1.tick == 1);
  CHECK_FALSE(ground_contact_flag(w1));
}

TEST_CASE("standing robot settles with contact force equal to its weight") {
  SimParams p;
  p.jets.b1 = p.jets.b2 = p.jets.c = 0.0;  // turbines off, not idling
  WorldState w = standing_world(p, p.model.nominal_posture);
  for (int i = 0; i < 3000; ++i) w = world_step(w, {}, p.model.nominal_posture.angles, p);
  const double fz = w.contact_forces[0].z() + w.contact_forces[1].z();
  CHECK(std::abs(fz - p.model.weight()) < 0.01 * p.model.weight());
  CHECK(ground_contact_flag(w));
  CHECK(truth_com_velocity(w, p.model).norm() < 1e-3);
  CHECK(w.base.orientation.angularDistance(Quat::Identity()) < 0.01);
}

TEST_CASE("hover trim thrust balances gravity") {
  SimParams p;
  const auto trim = solve_hover_trim(p.model, Mat3::Identity(), 1.0, p.model.nominal_posture);
  WorldState w = airborne(p, 1.0);
  w.q = trim.q;
  for (int i = 0; i < 4; ++i) w.jets[i].thrust = trim.thrusts(i);
  const WorldWrench wr = world_wrench(w, p);
  const Vec3 accel = (wr.jets.head<3>() + wr.gravity) / p.model.mass;
  CHECK(accel.norm() < 1e-6);
  CHECK(wr.jets.tail<3>().norm() < 1e-6);
  CHECK(wr.contact.norm() == 0.0);
}

TEST_CASE("contact flag thresholds") {
  WorldState w;
  w.contact_forces = {Vec3(0, 0, 0.5), Vec3::Zero()};
  CHECK_FALSE(ground_contact_flag(w));
  w.contact_forces = {Vec3::Zero(), Vec3(0, 0, 1.5)};
  CHECK(ground_contact_flag(w));
  const SimParams p;
  WorldState up = airborne(p, 0.5);
  up = world_step(up, {}, p.model.nominal_posture.angles, p);
  CHECK_FALSE(ground_contact_flag(up));
}

TEST_CASE("energy drift below 0.1% without thrust or contact") {
  SimParams p;
  p.jets.b1 = p.jets.b2 = p.jets.c = 0.0;  // turbines stay at zero thrust
  WorldState w = airborne(p, 10.0);
  w.base.ang_velocity = Vec3(0.8, -1.2, 2.0);
  w.base.lin_velocity = Vec3(0.5, 0.2, 3.0);
  const double e0 = mechanical_energy(w, p);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    w = world_step(w, {}, w.q.angles, p);
    worst = std::max(worst, std::abs(mechanical_energy(w, p) - e0));
  }
  CHECK(worst < 1e-3 * std::abs(e0));
  CHECK(std::abs(w.base.orientation.norm() - 1.0) < 1e-12);
}

TEST_CASE("momentum derivative matches the centroidal rhs plus contact wrench") {
  SimParams p;
  WorldState w = standing_world(p, p.model.nominal_posture);
  const auto trim = solve_hover_trim(p.model, Mat3::Identity(), 1.0, p.model.nominal_posture);
  ThrottleCommand u;
  for (int i = 0; i < 4; ++i) u.u(i) = p.jets.throttle_for_thrust(1.08 * trim.thrusts(i));
  double se = 0.0, ref = 0.0;
  for (int k = 0; k < 6000; ++k) {
    const WorldState next = world_step(w, u, trim.q.angles, p);
    const Vec3 dl = p.model.mass * (truth_com_velocity(next, p.model) - truth_com_velocity(w, p.model)) / p.dt;
    const WorldWrench wr = world_wrench(w, p);
    Vec4 t;
    for (int i = 0; i < 4; ++i) t(i) = w.jets[i].thrust;
    const auto a = allocation_matrix(p.model, w.q, w.base.pose(), truth_com(w, p.model));
    const Vec3 expected = centroidal_rhs(a, t, p.model, 1.0).head<3>() + wr.contact.head<3>();
    se += (dl - expected).squaredNorm();
    ref += expected.squaredNorm() + p.model.weight() * p.model.weight() * 1e-6;
    w = next;
  }
  CHECK(std::sqrt(se / ref) < 0.01);
}

TEST_CASE("determinism: identical trajectories") {
  const SimParams p;
  WorldState a = standing_world(p, p.model.nominal_posture), b = a;
  ThrottleCommand u;
  u.u = Vec4(60, 61, 58, 59);
  SensorSuite sa(NoiseConfig{}, p), sb(NoiseConfig{}, p);
  for (int i = 0; i < 2000; ++i) {
    const auto ba = sa.sample(a);
    const auto bb = sb.sample(b);
    if (ba.imu) CHECK(ba.imu->ang_velocity == bb.imu->ang_velocity);
    a = world_step(a, u, p.model.nominal_posture.angles, p);
    b = world_step(b, u, p.model.nominal_posture.angles, p);
  }
  CHECK(a.base.position == b.base.position);
  CHECK(a.base.orientation.coeffs() == b.base.orientation.coeffs());
  CHECK(a.jets[2].thrust == b.jets[2].thrust);
}

TEST_CASE("joint servo is a first-order lag clamped to limits") {
  const SimParams p;
  WorldState w = airborne(p, 5.0);
  w.q.angles.setZero();
  const Vec4 ref(0.3, -0.2, 2.0, 0.1);
  for (int i = 0; i < 50; ++i) w = world_step(w, {}, ref, p);
  const double expected = 1.0 - std::pow(1.0 - 0.001 / 0.05, 50);
  CHECK(w.q.angles(0) == doctest::Approx(0.3 * expected).epsilon(1e-12));
  CHECK(w.q.angles(1) == doctest::Approx(-0.2 * expected).epsilon(1e-12));
  for (int i = 0; i < 1000; ++i) w = world_step(w, {}, ref, p);
  CHECK(w.q.angles(2) == p.model.joint_limits.upper(2));
}

TEST_CASE("non-finite input faults and freezes the world") {
  const SimParams p;
  WorldState w = airborne(p, 1.0);
  ThrottleCommand u;
  u.u(0) = std::nan("");
  WorldState a = world_step(w, u, w.q.angles, p);
  a = world_step(a, u, w.q.angles, p);
  a = world_step(a, {}, w.q.angles, p);
  CHECK(a.faulted);
  CHECK(a.tick == 0);
}

TEST_CASE("sensor rate schedule over one second") {
  const SimParams p;
  SensorSuite s(NoiseConfig{}, p);
  WorldState w = standing_world(p, p.model.nominal_posture);
  int ft = 0, imu = 0, vio = 0, throttle_points = 0, joint_refs = 0;
  for (int k = 0; k < 1000; ++k) {
    w.tick = static_cast<std::uint64_t>(k);
    const auto b = s.sample(w);
    ft += b.ft.has_value();
    imu += b.imu.has_value();
    vio += b.vio.has_value();
    throttle_points += k % 100 == 0;
    ++joint_refs;
  }
  CHECK(ft == 100);
  CHECK(imu == 200);
  CHECK(vio == 30);
  CHECK(throttle_points == 10);
  CHECK(joint_refs == 1000);
}

TEST_CASE("noiseless sensors equal truth projections") {
  SimParams p;
  WorldState w = airborne(p, 1.0);
  for (int i = 0; i < 4; ++i) w.jets[i].thrust = 50.0 + 10.0 * i;
  w.base.ang_velocity = Vec3(0.1, 0.2, -0.3);
  SensorSuite s(NoiseConfig::noiseless(), p);
  const auto b = s.sample(w);
  REQUIRE(b.ft.has_value());
  REQUIRE(b.imu.has_value());
  REQUIRE(b.vio.has_value());
  for (int i = 0; i < 4; ++i) {
    CHECK(ft_to_thrust_intensity((*b.ft)[i], p.model.jets[i]) == doctest::Approx(w.jets[i].thrust));
    CHECK(rpm_to_thrust((*b.rpm)[i], p.rpm_map) == doctest::Approx(w.jets[i].thrust).epsilon(1e-12));
  }
  CHECK((b.imu->ang_velocity - w.base.ang_velocity).norm() == 0.0);
  CHECK(b.imu->orientation.angularDistance(w.base.orientation) < 1e-12);
  CHECK((b.vio->position - w.base.position).norm() == 0.0);
}

TEST_CASE("VIO reports the truth from 20 ms earlier") {
  const SimParams p;
  SensorSuite s(NoiseConfig::noiseless(), p);
  WorldState w = airborne(p, 3.0);
  std::vector<Vec3> positions;
  for (int k = 0; k < 200; ++k) {
    positions.push_back(w.base.position);
    const auto b = s.sample(w);
    if (b.vio && k >= 20) CHECK((b.vio->position - positions[static_cast<std::size_t>(k - 20)]).norm() == 0.0);
    w = world_step(w, {}, w.q.angles, p);
  }
}

TEST_CASE("FT noise sample statistics and bias") {
  SimParams p;
  NoiseConfig n;
  n.ft_bias[1] = Vec3(0.0, 0.0, 4.0);
  SensorSuite s(n, p);
  WorldState w = airborne(p, 1.0);
  for (int i = 0; i < 4; ++i) w.jets[i].thrust = 100.0;
  std::vector<double> x, biased;
  for (std::uint64_t k = 0; k < 100000; k += 10) {
    w.tick = k;
    const auto b = s.sample(w);
    x.push_back((*b.ft)[0].force.x());
    biased.push_back(ft_to_thrust_intensity((*b.ft)[1], p.model.jets[1]) - 100.0);
  }
  REQUIRE(x.size() == 10000);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (x.size() - 1));
  CHECK(sd >= 1.9);
  CHECK(sd <= 2.1);
  const double bmean = std::accumulate(biased.begin(), biased.end(), 0.0) / biased.size();
  CHECK(std::abs(bmean - 4.0) < 0.1);
}

TEST_CASE("noise config validation") {
  NoiseConfig n;
  n.gyro_std = -1.0;
  CHECK_THROWS_AS(n.validate(), DomainError);
  SimParams p;
  p.dt = 0.0;
  CHECK_THROWS_AS(p.validate(), DomainError);
}
