#pragma once

// Additive-noise Unscented Kalman Filter over flat vectors. The engine is
// stateless: every call takes a belief by value and returns a new one.
// Manifold-valued states are the caller's business (use an error-state chart).

#include <functional>

#include "jetvtol/common.hpp"

namespace jetvtol::ukf {

struct GaussianBelief {
  VecX mean;
  MatX covariance;

  GaussianBelief() = default;
  /// Symmetrizes and clips eigenvalues below -1e-9 back to zero.
  GaussianBelief(VecX m, MatX p);

  Eigen::Index dim() const { return mean.size(); }
};

struct SigmaParams {
  double alpha = 0.1;
  double beta = 2.0;
  double kappa = 0.0;

  double lambda(Eigen::Index n) const {
    const auto nd = static_cast<double>(n);
    return alpha * alpha * (nd + kappa) - nd;
  }
  /// Throws DomainError when alpha is outside (0, 1] or n + lambda <= 0.
  void validate(Eigen::Index n) const;
};

struct SigmaPointSet {
  MatX points;  // n x (2n+1), column 0 is the mean
  VecX mean_weights;
  VecX cov_weights;
};

SigmaPointSet sigma_points(const GaussianBelief& belief, const SigmaParams& params = {});

using ProcessFn = std::function<VecX(const VecX& state, double dt)>;
using MeasurementFn = std::function<VecX(const VecX& state)>;

GaussianBelief ukf_predict(const GaussianBelief& belief, const ProcessFn& process,
                           const MatX& q_noise, double dt, const SigmaParams& params = {});

struct UpdateResult {
  GaussianBelief belief;
  VecX innovation;
  MatX innovation_cov;
  /// innovation' * S^-1 * innovation
  double nis = 0.0;
};

UpdateResult ukf_update(const GaussianBelief& belief, const VecX& measurement,
                        const MeasurementFn& h, const MatX& r_noise,
                        const SigmaParams& params = {});

/// Symmetric PSD repair: eigenvalues clipped to `floor` (0 keeps them >= 0).
MatX repair_psd(const MatX& p, double floor = 0.0);

}  // namespace jetvtol::ukf
