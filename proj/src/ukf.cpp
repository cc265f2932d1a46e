#include "jetvtol/ukf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace jetvtol::ukf {

namespace {

constexpr double kNegativeEigenTolerance = 1e-9;
constexpr double kCholeskyFloor = 1e-9;

MatX symmetrized(const MatX& p) { return 0.5 * (p + p.transpose()); }

// Lower-triangular square root; falls back to an eigen-clipped square root
// when the plain Cholesky factorization fails.
MatX matrix_sqrt(const MatX& p) {
  Eigen::LLT<MatX> llt(p);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const MatX repaired = repair_psd(p, kCholeskyFloor);
  Eigen::LLT<MatX> llt2(repaired);
  if (llt2.info() != Eigen::Success) throw NumericError("sigma_points: Cholesky failed after PSD repair");
  return llt2.matrixL();
}

}  // namespace

MatX repair_psd(const MatX& p, double floor) {
  Eigen::SelfAdjointEigenSolver<MatX> es(symmetrized(p));
  if (es.info() != Eigen::Success) throw NumericError("repair_psd: eigen decomposition failed");
  const VecX clipped = es.eigenvalues().cwiseMax(floor);
  return symmetrized(es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose());
}

GaussianBelief::GaussianBelief(VecX m, MatX p) : mean(std::move(m)), covariance(symmetrized(p)) {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
    throw DomainError("GaussianBelief: covariance shape does not match mean");
  }
  if (!mean.allFinite() || !covariance.allFinite()) throw NumericError("GaussianBelief: non-finite values");
  if (mean.size() > 0) {
    Eigen::SelfAdjointEigenSolver<MatX> es(covariance, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -kNegativeEigenTolerance) covariance = repair_psd(covariance, 0.0);
  }
}

void SigmaParams::validate(Eigen::Index n) const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("SigmaParams: alpha must lie in (0, 1]");
  if (!(static_cast<double>(n) + lambda(n) > 0.0)) throw DomainError("SigmaParams: n + lambda must be positive");
}

SigmaPointSet sigma_points(const GaussianBelief& belief, const SigmaParams& params) {
  const Eigen::Index n = belief.dim();
  params.validate(n);
  const double lambda = params.lambda(n);
  const double spread = std::sqrt(static_cast<double>(n) + lambda);
  const MatX root = matrix_sqrt(belief.covariance);

  SigmaPointSet s;
  s.points.resize(n, 2 * n + 1);
  s.points.col(0) = belief.mean;
  for (Eigen::Index i = 0; i < n; ++i) {
    s.points.col(1 + i) = belief.mean + spread * root.col(i);
    s.points.col(1 + n + i) = belief.mean - spread * root.col(i);
  }
  const double denom = static_cast<double>(n) + lambda;
  s.mean_weights = VecX::Constant(2 * n + 1, 0.5 / denom);
  s.cov_weights = s.mean_weights;
  s.mean_weights(0) = lambda / denom;
  s.cov_weights(0) = lambda / denom + (1.0 - params.alpha * params.alpha + params.beta);
  return s;
}

GaussianBelief ukf_predict(const GaussianBelief& belief, const ProcessFn& process,
                           const MatX& q_noise, double dt, const SigmaParams& params) {
  if (!(dt > 0.0)) throw DomainError("ukf_predict: dt must be positive");
  const auto sp = sigma_points(belief, params);
  const Eigen::Index count = sp.points.cols();

  MatX propagated;
  for (Eigen::Index i = 0; i < count; ++i) {
    VecX y = process(sp.points.col(i), dt);
    if (!y.allFinite()) {
      throw NumericError("ukf_predict: process returned non-finite value at sigma point " + std::to_string(i));
    }
    if (i == 0) propagated.resize(y.size(), count);
    propagated.col(i) = y;
  }
  if (q_noise.rows() != propagated.rows() || q_noise.cols() != propagated.rows()) {
    throw DomainError("ukf_predict: process noise shape mismatch");
  }
  const VecX mean = propagated * sp.mean_weights;
  const MatX dev = propagated.colwise() - mean;
  MatX cov = dev * sp.cov_weights.asDiagonal() * dev.transpose() + q_noise;
  return GaussianBelief(mean, cov);
}

UpdateResult ukf_update(const GaussianBelief& belief, const VecX& measurement,
                        const MeasurementFn& h, const MatX& r_noise, const SigmaParams& params) {
  const auto sp = sigma_points(belief, params);
  const Eigen::Index count = sp.points.cols();
  const Eigen::Index m = measurement.size();
  if (r_noise.rows() != m || r_noise.cols() != m) throw DomainError("ukf_update: measurement noise shape mismatch");

  MatX z(m, count);
  for (Eigen::Index i = 0; i < count; ++i) {
    VecX zi = h(sp.points.col(i));
    if (zi.size() != m || !zi.allFinite()) {
      throw NumericError("ukf_update: measurement function failed at sigma point " + std::to_string(i));
    }
    z.col(i) = zi;
  }
  const VecX z_mean = z * sp.mean_weights;
  const MatX dz = z.colwise() - z_mean;
  const MatX dx = sp.points.colwise() - belief.mean;
  const MatX s = symmetrized(dz * sp.cov_weights.asDiagonal() * dz.transpose() + r_noise);
  const MatX pxz = dx * sp.cov_weights.asDiagonal() * dz.transpose();

  // The sigma-point floor keeps S from being exactly zero, so test the
  // spectrum against a scale-aware threshold instead of relying on LLT alone.
  const VecX eig = Eigen::SelfAdjointEigenSolver<MatX>(s, Eigen::EigenvaluesOnly).eigenvalues();
  Eigen::LLT<MatX> llt(s);
  if (llt.info() != Eigen::Success || !(eig.minCoeff() > 1e-8 * std::max(1.0, eig.maxCoeff()))) {
    throw NumericError("ukf_update: singular innovation covariance");
  }
  const MatX gain = llt.solve(pxz.transpose()).transpose();
  const VecX innovation = measurement - z_mean;

  UpdateResult r;
  r.innovation = innovation;
  r.innovation_cov = s;
  r.nis = innovation.dot(llt.solve(innovation));
  r.belief = GaussianBelief(belief.mean + gain * innovation,
                            belief.covariance - gain * s * gain.transpose());
  return r;
}

}  // namespace jetvtol::ukf
