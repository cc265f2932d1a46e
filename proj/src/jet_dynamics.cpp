#include "jetvtol/jet_dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace jetvtol {

namespace {

constexpr int kBenchSubsteps = 10;
constexpr std::size_t kMinIdentificationSamples = 500;

}  // namespace

JetCoefficients reference_jet_coefficients() { return JetCoefficients{}; }

double JetCoefficients::throttle_for_thrust(double thrust) const {
  // b2*u^2 + b1*u + (c + a1*T) = 0
  const double k0 = c + a1 * thrust;
  double u = 0.0;
  if (std::abs(b2) < 1e-15) {
    u = -k0 / b1;
  } else {
    const double disc = b1 * b1 - 4.0 * b2 * k0;
    u = disc < 0.0 ? -b1 / (2.0 * b2) : (-b1 + std::sqrt(disc)) / (2.0 * b2);
  }
  return std::clamp(u, 0.0, kMaxThrottle);
}

ThrottleCommand limit_throttle(const ThrottleCommand& desired, const ThrottleCommand& previous,
                               double du_max) {
  ThrottleCommand out;
  for (int i = 0; i < kNumJets; ++i) {
    const double lo = std::max(0.0, previous.u(i) - du_max);
    const double hi = std::min(kMaxThrottle, previous.u(i) + du_max);
    out.u(i) = std::clamp(desired.u(i), lo, hi);
  }
  return out;
}

double jet_acceleration(const JetState& s, double u, const JetCoefficients& k) {
  return k.a1 * s.thrust + k.a2 * s.thrust_rate + k.b1 * u + k.b2 * u * u + k.c;
}

JetState jet_step(const JetState& state, double u, const JetCoefficients& coeffs, double dt) {
  if (!(dt > 0.0 && dt <= 0.1)) throw DomainError("jet_step: dt must lie in (0, 0.1]");
  if (!(u >= 0.0 && u <= kMaxThrottle)) throw DomainError("jet_step: throttle outside [0, 100]");
  if (!std::isfinite(state.thrust) || !std::isfinite(state.thrust_rate)) {
    throw NumericError("jet_step: non-finite jet state");
  }
  JetState next;
  next.thrust_rate = state.thrust_rate + dt * jet_acceleration(state, u, coeffs);
  next.thrust = state.thrust + dt * next.thrust_rate;
  if (next.thrust <= 0.0) {
    next.thrust = 0.0;
    next.thrust_rate = std::max(0.0, next.thrust_rate);
  } else if (next.thrust >= kMaxThrust) {
    next.thrust = kMaxThrust;
    next.thrust_rate = std::min(0.0, next.thrust_rate);
  }
  return next;
}

JetLinearization jet_linearize(const JetState& state, double u, const JetCoefficients& k) {
  if (!(u >= 0.0 && u <= kMaxThrottle)) throw DomainError("jet_linearize: throttle outside [0, 100]");
  JetLinearization lin;
  lin.state_matrix << 0.0, 1.0, k.a1, k.a2;
  lin.input_matrix << 0.0, k.b1 + 2.0 * k.b2 * u;
  const Eigen::Vector2d x(state.thrust, state.thrust_rate);
  const Eigen::Vector2d f(state.thrust_rate, jet_acceleration(state, u, k));
  lin.affine = f - lin.state_matrix * x - lin.input_matrix * u;
  return lin;
}

ThrottleProfile ThrottleProfile::staircase(const std::vector<double>& levels, double hold_s,
                                           double dt) {
  ThrottleProfile p;
  p.dt = dt;
  const auto per_level = static_cast<std::size_t>(std::llround(hold_s / dt));
  for (double level : levels) p.u.insert(p.u.end(), per_level, level);
  return p;
}

BenchDataset generate_bench_data(const JetCoefficients& coeffs, const ThrottleProfile& profile,
                                 double noise_std, std::uint64_t seed) {
  for (double u : profile.u) {
    if (!(u >= 0.0 && u <= kMaxThrottle)) throw DomainError("throttle profile outside [0, 100]");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  BenchDataset data;
  data.reserve(profile.u.size());
  JetState s;
  if (!profile.u.empty()) {
    s.thrust = std::clamp(coeffs.equilibrium_thrust(profile.u.front()), 0.0, kMaxThrust);
  }
  const double sub_dt = profile.dt / kBenchSubsteps;
  for (std::size_t i = 0; i < profile.u.size(); ++i) {
    const double n = noise_std > 0.0 ? noise_std * noise(rng) : 0.0;
    data.push_back({static_cast<double>(i) * profile.dt, profile.u[i], s.thrust + n});
    for (int k = 0; k < kBenchSubsteps; ++k) s = jet_step(s, profile.u[i], coeffs, sub_dt);
  }
  return data;
}

namespace {

// 5-point moving average over samples spaced `stride` apart; ends untouched.
std::vector<double> smooth5(const std::vector<double>& x, std::size_t stride) {
  std::vector<double> y = x;
  const std::size_t s = stride;
  for (std::size_t i = 2 * s; i + 2 * s < x.size(); ++i) {
    y[i] = (x[i - 2 * s] + x[i - s] + x[i] + x[i + s] + x[i + 2 * s]) / 5.0;
  }
  return y;
}

// Stencil spacing for differentiation, in samples.
std::size_t derivative_stride(double dt) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.05 / dt)));
}

}  // namespace

std::vector<double> simulate_thrust(const JetCoefficients& coeffs, const BenchDataset& data) {
  std::vector<double> out;
  if (data.empty()) return out;
  const double dt = data.size() > 1 ? data[1].t - data[0].t : 0.01;
  const double sub_dt = dt / kBenchSubsteps;
  JetState s{std::clamp(data.front().thrust, 0.0, kMaxThrust), 0.0};
  out.reserve(data.size());
  for (const auto& sample : data) {
    out.push_back(s.thrust);
    for (int k = 0; k < kBenchSubsteps; ++k) s = jet_step(s, sample.u, coeffs, sub_dt);
  }
  return out;
}

IdentificationResult identify_coefficients(const BenchDataset& data) {
  const std::size_t n = data.size();
  if (n < kMinIdentificationSamples) throw DomainError("identification needs at least 500 samples");
  const double dt = data[1].t - data[0].t;
  if (!(dt > 0.0)) throw DomainError("identification needs increasing timestamps");
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs((data[i].t - data[i - 1].t) - dt) > 1e-6 * dt + 1e-12) {
      throw DomainError("identification needs a uniform sampling interval");
    }
  }

  // The moving average is linear and time invariant, so applying it to the
  // thrust and to both throttle regressors preserves the model equation.
  const std::size_t st = derivative_stride(dt);
  const double h = dt * static_cast<double>(st);
  std::vector<double> thrust(n), u1(n), u2(n);
  for (std::size_t i = 0; i < n; ++i) {
    thrust[i] = data[i].thrust;
    u1[i] = data[i].u;
    u2[i] = data[i].u * data[i].u;
  }
  const auto f = smooth5(thrust, st);
  const auto su1 = smooth5(u1, st);
  const auto su2 = smooth5(u2, st);

  // Five-point central differences; skip samples whose stencil plus smoothing
  // window touches a throttle discontinuity.
  const std::size_t reach = 4 * st;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> last_jump(n, 0);
  std::size_t jump = 0;
  bool any_jump = false;
  for (std::size_t i = 1; i < n; ++i) {
    if (data[i].u != data[i - 1].u) {
      jump = i;
      any_jump = true;
    }
    last_jump[i] = jump;
  }
  std::vector<std::size_t> next_jump(n, n);
  for (std::size_t i = n - 1; i-- > 0;) {
    next_jump[i] = data[i + 1].u != data[i].u ? i + 1 : next_jump[i + 1];
  }
  for (std::size_t i = reach; i + reach < n; ++i) {
    const bool after_clear = !any_jump || last_jump[i] == 0 || i - last_jump[i] >= reach;
    const bool before_clear = next_jump[i] >= n || next_jump[i] - i > reach;
    if (after_clear && before_clear) rows.push_back(i);
  }
  if (rows.size() < 5) {
    throw IdentifiabilityError("too few samples away from throttle steps", {"a1", "a2", "b1", "b2", "c"});
  }

  MatX reg(rows.size(), 5);
  VecX rhs(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    const double fp2 = f[i + 2 * st], fp1 = f[i + st], fm1 = f[i - st], fm2 = f[i - 2 * st];
    const double d1 = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h);
    const double d2 = (-fp2 + 16.0 * fp1 - 30.0 * f[i] + 16.0 * fm1 - fm2) / (12.0 * h * h);
    reg.row(static_cast<Eigen::Index>(r)) << f[i], d1, su1[i], su2[i], 1.0;
    rhs(static_cast<Eigen::Index>(r)) = d2;
  }

  // Column scaling so the rank test is unit-independent.
  const VecX scale = reg.colwise().norm().transpose().cwiseMax(1e-300);
  const MatX reg_scaled = reg * scale.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<MatX> svd(reg_scaled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VecX sv = svd.singularValues();
  const double tol = 1e-7 * sv(0);
  static const std::array<const char*, 5> names{"a1", "a2", "b1", "b2", "c"};
  std::set<std::string> deficient;
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    if (sv(k) > tol) continue;
    const VecX dir = svd.matrixV().col(k);
    for (Eigen::Index p = 0; p < dir.size(); ++p) {
      if (std::abs(dir(p)) > 0.1) deficient.insert(names[static_cast<std::size_t>(p)]);
    }
  }
  if (!deficient.empty()) {
    std::vector<std::string> dirs(deficient.begin(), deficient.end());
    std::ostringstream os;
    os << "regressor is rank deficient; not separable:";
    for (const auto& d : dirs) os << ' ' << d;
    throw IdentifiabilityError(os.str(), dirs);
  }

  const VecX theta_scaled = svd.solve(rhs);
  const VecX theta = theta_scaled.cwiseQuotient(scale);

  IdentificationResult result;
  result.accel_residual_rms = std::sqrt((reg * theta - rhs).squaredNorm() / static_cast<double>(rows.size()));

  // Differentiated noise biases the equation-error fit towards slower
  // dynamics. Refine on the simulated trace (output error), starting from it.
  const auto to_coeffs = [](const VecX& th) {
    JetCoefficients k;
    k.a1 = th(0);
    k.a2 = th(1);
    k.b1 = th(2);
    k.b2 = th(3);
    k.c = th(4);
    k.idle_thrust = std::clamp(k.equilibrium_thrust(0.0), 0.0, kMaxThrust);
    return k;
  };
  const auto residual = [&](const VecX& th, VecX& out) {
    const JetCoefficients k = to_coeffs(th);
    if (!k.is_stable()) return false;
    std::vector<double> sim;
    try {
      sim = simulate_thrust(k, data);
    } catch (const std::exception&) {
      return false;
    }
    out.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) out(static_cast<Eigen::Index>(i)) = sim[i] - data[i].thrust;
    return out.allFinite();
  };
  VecX best = theta;
  VecX r;
  if (residual(best, r)) {
    double cost = r.squaredNorm();
    double mu = 1e-3;
    VecX rp;
    for (int it = 0; it < 30; ++it) {
      MatX jac(r.size(), 5);
      bool ok = true;
      for (int p = 0; p < 5 && ok; ++p) {
        VecX th = best;
        const double step = 1e-6 * std::max(std::abs(best(p)), 1e-3);
        th(p) += step;
        ok = residual(th, rp);
        if (ok) jac.col(p) = (rp - r) / step;
      }
      if (!ok) break;
      const VecX d = jac.colwise().norm().transpose().cwiseMax(1e-300);
      const MatX js = jac * d.cwiseInverse().asDiagonal();
      const MatX jtj = js.transpose() * js;
      const VecX g = js.transpose() * r;
      bool improved = false;
      for (int tries = 0; tries < 10; ++tries) {
        MatX lhs = jtj;
        lhs.diagonal().array() += mu * jtj.diagonal().array().maxCoeff();
        const VecX delta = -lhs.ldlt().solve(g).cwiseQuotient(d);
        const VecX cand = best + delta;
        if (residual(cand, rp) && rp.squaredNorm() < cost) {
          const double gain = (cost - rp.squaredNorm()) / cost;
          best = cand;
          r = rp;
          cost = rp.squaredNorm();
          mu = std::max(mu * 0.3, 1e-9);
          improved = true;
          if (gain < 1e-10) it = 30;
          break;
        }
        mu *= 10.0;
      }
      if (!improved) break;
    }
  }
  result.coeffs = to_coeffs(best);

  const auto sim = simulate_thrust(result.coeffs, data);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (sim[i] - data[i].thrust) * (sim[i] - data[i].thrust);
  result.residual_rms = std::sqrt(ss / static_cast<double>(n));
  return result;
}

void write_bench_csv(std::ostream& os, const BenchDataset& data) {
  os << "t,u,thrust\n";
  os << std::setprecision(17);
  for (const auto& s : data) os << s.t << ',' << s.u << ',' << s.thrust << '\n';
}

BenchDataset read_bench_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DomainError("bench csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,u,thrust") throw DomainError("bench csv: expected header 't,u,thrust'");
  BenchDataset data;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    BenchSample s;
    char c1 = 0, c2 = 0;
    if (!(ls >> s.t >> c1 >> s.u >> c2 >> s.thrust) || c1 != ',' || c2 != ',') {
      throw DomainError("bench csv: malformed row at line " + std::to_string(lineno));
    }
    data.push_back(s);
  }
  return data;
}

}  // namespace jetvtol
