#pragma once

// Second-order turbine thrust model
//
//   T'' = a1*T + a2*T' + b1*u + b2*u^2 + c
//
// with throttle u in percent, plus its linearization, bench-data synthesis
// and least-squares identification of the coefficients.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "jetvtol/common.hpp"

namespace jetvtol {

inline constexpr double kMaxThrust = 250.0;    // N
inline constexpr double kMaxThrottle = 100.0;  // percent

struct JetState {
  double thrust = 0.0;
  double thrust_rate = 0.0;
};

struct JetCoefficients {
  double a1 = -2.25;
  double a2 = -2.7;
  double b1 = 2.77;
  double b2 = 0.02;
  double c = 18.0;
  double idle_thrust = 8.0;

  /// Roots of s^2 - a2*s - a1 in the open left half plane.
  bool is_stable() const { return a1 < 0.0 && a2 < 0.0; }
  /// Static thrust for a constant throttle (not clamped).
  double equilibrium_thrust(double u) const { return -(b1 * u + b2 * u * u + c) / a1; }
  /// Smallest throttle in [0, 100] whose equilibrium thrust reaches `thrust`.
  double throttle_for_thrust(double thrust) const;
};

/// Reference coefficients: idle 8 N, 220 N at full throttle, ~2.5 s 0->200 N rise.
JetCoefficients reference_jet_coefficients();

struct ThrottleCommand {
  Vec4 u = Vec4::Zero();
};

/// Clamps to [0, 100] and to |u - previous| <= du_max element-wise.
ThrottleCommand limit_throttle(const ThrottleCommand& desired, const ThrottleCommand& previous,
                               double du_max);

/// Acceleration T'' at (state, u).
double jet_acceleration(const JetState& s, double u, const JetCoefficients& k);

/// Semi-implicit Euler step with thrust clamped to [0, kMaxThrust].
JetState jet_step(const JetState& state, double u, const JetCoefficients& coeffs, double dt);

struct JetLinearization {
  Eigen::Matrix2d state_matrix;
  Eigen::Vector2d input_matrix;
  /// f(x0, u0) - A*x0 - B*u0.
  Eigen::Vector2d affine;
};

JetLinearization jet_linearize(const JetState& state, double u, const JetCoefficients& coeffs);

struct BenchSample {
  double t = 0.0;
  double u = 0.0;
  double thrust = 0.0;
};

using BenchDataset = std::vector<BenchSample>;

/// Throttle as a function of time, sampled on a uniform grid.
struct ThrottleProfile {
  double dt = 0.01;
  std::vector<double> u;

  static ThrottleProfile staircase(const std::vector<double>& levels, double hold_s, double dt);
};

BenchDataset generate_bench_data(const JetCoefficients& coeffs, const ThrottleProfile& profile,
                                 double noise_std, std::uint64_t seed);

class IdentifiabilityError : public std::runtime_error {
 public:
  IdentifiabilityError(const std::string& what, std::vector<std::string> directions)
      : std::runtime_error(what), directions_(std::move(directions)) {}
  const std::vector<std::string>& directions() const { return directions_; }

 private:
  std::vector<std::string> directions_;
};

struct IdentificationResult {
  JetCoefficients coeffs;
  double residual_rms = 0.0;  // N, thrust reproduced by open-loop simulation
  double accel_residual_rms = 0.0;  // N/s^2, regression residual
};

/// Least-squares fit of (a1, a2, b1, b2, c) from measured thrust traces.
IdentificationResult identify_coefficients(const BenchDataset& data);

/// Open-loop simulation of a dataset's throttle trace, starting from the
/// first measured thrust at rest.
std::vector<double> simulate_thrust(const JetCoefficients& coeffs, const BenchDataset& data);

void write_bench_csv(std::ostream& os, const BenchDataset& data);
BenchDataset read_bench_csv(std::istream& is);

}  // namespace jetvtol
