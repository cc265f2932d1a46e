#pragma once

// Linear-parameter-varying MPC over the centroidal momentum and turbine
// dynamics, the take-off alpha schedule and the safety monitor.
//
// Prediction state (24): com (3), linear momentum (3), euler zyx (3),
// angular momentum (3), thrust (4), thrust rate (4), joint angles (4).
// Inputs (8): throttle per turbine (4), joint rates (4).

#include <optional>
#include <string>
#include <vector>

#include "jetvtol/jet_dynamics.hpp"
#include "jetvtol/model_core.hpp"
#include "jetvtol/qp_solver.hpp"

namespace jetvtol {

inline constexpr int kMpcStates = 24;
inline constexpr int kMpcInputs = 8;

using MpcVec = Eigen::Matrix<double, kMpcStates, 1>;
using MpcInput = Eigen::Matrix<double, kMpcInputs, 1>;
using MpcStateMatrix = Eigen::Matrix<double, kMpcStates, kMpcStates>;
using MpcInputMatrix = Eigen::Matrix<double, kMpcStates, kMpcInputs>;

namespace mpc_index {
inline constexpr int com = 0;
inline constexpr int lin_momentum = 3;
inline constexpr int euler = 6;
inline constexpr int ang_momentum = 9;
inline constexpr int thrust = 12;
inline constexpr int thrust_rate = 16;
inline constexpr int joints = 20;
}  // namespace mpc_index

struct MpcState {
  CentroidalState centroidal;
  std::array<JetState, kNumJets> jets{};
  JointConfig q;

  MpcVec to_vector() const;
  static MpcState from_vector(const MpcVec& v);
};

struct MpcWeights {
  Vec3 com_position = Vec3(60.0, 60.0, 80.0);
  Vec3 euler = Vec3(20.0, 400.0, 400.0);
  Vec3 lin_momentum = Vec3(0.05, 0.05, 0.05);
  Vec3 ang_momentum = Vec3(2.0, 2.0, 2.0);
  Vec4 throttle_effort = Vec4::Constant(0.05);
  Vec4 joint_rate = Vec4::Constant(1.0);
  /// Pulls the predicted posture towards the hover trim posture.
  double joint_posture = 5.0;
  /// Penalty on throttle changes between consecutive coarse steps.
  double throttle_change = 0.05;
  /// Multiplies the state weights on the last horizon step.
  double terminal_scale = 3.0;
};

struct MpcParams {
  int horizon_steps = 15;
  double dt_coarse = 0.1;
  MpcWeights weights{};
  double throttle_min = 0.0;
  double throttle_max = kMaxThrottle;
  /// Largest throttle change per tick, percent.
  double throttle_rate_max = 15.0;
  double joint_rate_max = 1.5;  // rad/s
  JointLimits joint_limits{};
  double pitch_guard = 0.2;                  // rad from +-pi/2
  double shutdown_orientation_limit = 0.52;  // rad
  double max_estimate_age = 0.05;            // s
  QpSettings qp{.tol = 1e-6, .max_iter = 4000};

  /// Copies joint limits from the model.
  static MpcParams for_model(const RobotModel& model);
  void validate() const;
};

enum class FlightPhase { Idle, Spool, Ramp, Airborne, Shutdown };
const char* to_string(FlightPhase p);
std::optional<FlightPhase> flight_phase_from_string(const std::string& s);

struct TakeoffSchedule {
  double alpha = 0.0;
  double ramp_rate = 0.04;  // 1/s
  FlightPhase phase = FlightPhase::Idle;
};

/// Only Idle->Spool->Ramp->Airborne->Shutdown steps and any->Shutdown.
bool phase_transition_allowed(FlightPhase from, FlightPhase to);

/// Largest absolute wrapped Euler error.
double orientation_error(const Vec3& euler, const Vec3& euler_ref);

TakeoffSchedule advance_schedule(const TakeoffSchedule& schedule, const MpcState& x_estimated,
                                 const Vec3& euler_ref, bool ground_contact, double dt,
                                 double shutdown_orientation_limit = 0.52);

struct ReferenceTrajectory {
  std::vector<double> times;
  std::vector<Vec3> com;
  Vec3 euler = Vec3::Zero();

  static ReferenceTrajectory hold(const Vec3& com, const Vec3& euler);
  void validate() const;
  /// Piecewise linear, held constant outside the knot range.
  Vec3 com_at(double t) const;
  /// Adds a knot at `t`, dropping any later knots. Used for live setpoint changes.
  void append(double t, const Vec3& com);
  double end_time() const { return times.empty() ? 0.0 : times.back(); }
};

struct DiscreteModel {
  MpcStateMatrix a;
  MpcInputMatrix b;
  MpcVec c;
};

/// Continuous-time prediction model f(x, u).
MpcVec prediction_rhs(const RobotModel& model, const JetCoefficients& coeffs, const MpcVec& x,
                      const MpcInput& u, double alpha);

/// Analytic Jacobians (df/dx, df/du) at (x, u).
std::pair<MpcStateMatrix, MpcInputMatrix> prediction_jacobians(const RobotModel& model,
                                                               const JetCoefficients& coeffs,
                                                               const MpcVec& x, const MpcInput& u,
                                                               double alpha);

/// Forward-Euler discretization at dt of the model linearized at (x, u0).
/// Joint-rate inputs are zero at the linearization point.
/// Throws SingularityError within `pitch_guard` of +-pi/2.
DiscreteModel linearize_prediction_model(const RobotModel& model, const JetCoefficients& coeffs,
                                         const MpcState& x, const ThrottleCommand& u0,
                                         double alpha, double dt, double pitch_guard);

struct MpcQp {
  QpProblem qp;
  DiscreteModel model;
  MpcInput trim_input;
  HoverTrim trim;
  /// qp.objective(U) * cost_scale is the unscaled cost up to a constant.
  double cost_scale = 1.0;
};

/// Condensed QP over U = [u_0; ...; u_{N-1}] at time t.
MpcQp build_qp(const RobotModel& model, const JetCoefficients& coeffs, const MpcState& x,
               const ThrottleCommand& previous, const TakeoffSchedule& schedule,
               const ReferenceTrajectory& reference, double t, const MpcParams& params);

/// Linear ramp between two joint targets, t in [0, dt].
Vec4 interpolate_joint_reference(const Vec4& prev, const Vec4& next, double t, double dt = 0.1);

enum class MpcStatus { Ok, Gated, HeldAfterFailure, StaleEstimate, Singularity, Failed };
const char* to_string(MpcStatus s);

struct MpcDiagnostics {
  MpcStatus status = MpcStatus::Gated;
  QpStatus qp_status = QpStatus::Optimal;
  int qp_iterations = 0;
  double cost = 0.0;
  double solve_time = 0.0;  // s, only filled when wall timing is enabled
  std::string error;
  /// True when the controller asks the runtime to enter Shutdown.
  bool request_shutdown = false;
};

struct MpcCommand {
  ThrottleCommand throttle;
  Vec4 joint_reference = Vec4::Zero();
  MpcDiagnostics diagnostics;
};

struct MpcEstimate {
  MpcState x;
  double stamp = 0.0;  // time the oldest contributing estimate was produced
};

/// Stateful 10 Hz controller: warm starts, failure counting, shutdown ramp.
class FlightController {
 public:
  FlightController(RobotModel model, JetCoefficients coeffs, MpcParams params);

  MpcCommand step(double t, const MpcEstimate& estimate, const TakeoffSchedule& schedule,
                  const ReferenceTrajectory& reference);

  const MpcParams& params() const { return params_; }
  const ThrottleCommand& last_throttle() const { return last_.throttle; }
  void set_wall_timing(bool on) { wall_timing_ = on; }

 private:
  MpcCommand hold(MpcStatus status, const std::string& error);

  RobotModel model_;
  JetCoefficients coeffs_;
  MpcParams params_;
  QpSolver solver_;
  MpcCommand last_;
  std::optional<VecX> warm_;
  int consecutive_failures_ = 0;
  std::optional<Vec4> shutdown_from_;
  bool wall_timing_ = false;
};

}  // namespace jetvtol
