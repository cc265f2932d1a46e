#include <doctest.h>

#include <cmath>
#include <random>

#include "jetvtol/ukf.hpp"
#include "oracles.hpp"

using namespace jetvtol;
using namespace jetvtol::ukf;

namespace {

MatX random_stable(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> g;
  MatX a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = g(rng);
  Eigen::EigenSolver<MatX> es(a);
  const double radius = es.eigenvalues().cwiseAbs().maxCoeff();
  return a * (0.95 / radius);
}

MatX random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> g;
  MatX m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

VecX draw(std::mt19937_64& rng, const VecX& mean, const MatX& cov) {
  std::normal_distribution<double> g;
  VecX z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = g(rng);
  return mean + Eigen::LLT<MatX>(cov).matrixL() * z;
}

}  // namespace

TEST_CASE("sigma_points: closed form for n=2, lambda=1") {
  SigmaParams p;
  p.alpha = 1.0;
  p.kappa = 1.0;
  REQUIRE(p.lambda(2) == doctest::Approx(1.0));
  const auto s = sigma_points(GaussianBelief(VecX::Zero(2), MatX::Identity(2, 2)), p);
  REQUIRE(s.points.cols() == 5);
  const double r = std::sqrt(3.0);
  CHECK((s.points.col(0)).norm() == 0.0);
  CHECK((s.points.col(1) - Eigen::Vector2d(r, 0)).norm() < 1e-14);
  CHECK((s.points.col(2) - Eigen::Vector2d(0, r)).norm() < 1e-14);
  CHECK((s.points.col(3) - Eigen::Vector2d(-r, 0)).norm() < 1e-14);
  CHECK((s.points.col(4) - Eigen::Vector2d(0, -r)).norm() < 1e-14);
  CHECK(s.mean_weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("sigma_points reconstruct mean and covariance") {
  std::mt19937_64 rng(17);
  for (int n : {1, 3, 6, 12}) {
    const MatX p = oracle::random_spd(rng, n, 0.01, 10.0);
    const VecX m = random_matrix(rng, n, 1);
    const auto s = sigma_points(GaussianBelief(m, p));
    CHECK(s.mean_weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
    const VecX mean = s.points * s.mean_weights;
    CHECK((mean - m).norm() < 1e-12 * (1.0 + m.norm()));
    // Direct recomputation of the spread about the true mean with the
    // mean weights (the beta term only touches the centre point, which is
    // exactly the mean, so it drops out).
    MatX cov = MatX::Zero(n, n);
    for (Eigen::Index i = 0; i < s.points.cols(); ++i) {
      const VecX d = s.points.col(i) - m;
      cov += s.mean_weights(i) * d * d.transpose();
    }
    CHECK((cov - p).norm() < 1e-10 * (1.0 + p.norm()));
  }
}

TEST_CASE("sigma params validation") {
  SigmaParams p;
  p.alpha = 0.0;
  CHECK_THROWS_AS(p.validate(3), DomainError);
  p.alpha = 1.5;
  CHECK_THROWS_AS(p.validate(3), DomainError);
  p.alpha = 1.0;
  p.kappa = -3.0;
  CHECK_THROWS_AS(p.validate(3), DomainError);
}

TEST_CASE("belief construction repairs indefinite covariance") {
  MatX p(2, 2);
  p << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3, -1
  const GaussianBelief b(VecX::Zero(2), p);
  Eigen::SelfAdjointEigenSolver<MatX> es(b.covariance);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12);
  CHECK((b.covariance - b.covariance.transpose()).norm() == 0.0);
}

TEST_CASE("ukf_predict examples") {
  std::mt19937_64 rng(5);
  const int n = 4;
  const MatX p = oracle::random_spd(rng, n, 0.1, 2.0);
  const VecX m = random_matrix(rng, n, 1);
  const GaussianBelief b(m, p);
  const auto identity = [](const VecX& x, double) { return x; };

  const auto same = ukf_predict(b, identity, MatX::Zero(n, n), 0.01);
  CHECK((same.mean - m).norm() < 1e-10);
  CHECK((same.covariance - p).norm() < 1e-10);

  const MatX q = oracle::random_spd(rng, n, 0.01, 0.5);
  const auto added = ukf_predict(b, identity, q, 0.01);
  CHECK((added.covariance - (p + q)).norm() < 1e-10);

  const MatX f = random_matrix(rng, n, n);
  const auto lin = ukf_predict(b, [&](const VecX& x, double) { return VecX(f * x); }, q, 0.01);
  oracle::LinearKf kf{m, p};
  kf.predict(f, q);
  CHECK((lin.mean - kf.mean).norm() < 1e-8);
  CHECK((lin.covariance - kf.cov).norm() < 1e-8);
}

TEST_CASE("ukf_predict reports the non-finite sigma index") {
  const GaussianBelief b(VecX::Zero(2), MatX::Identity(2, 2));
  int calls = 0;
  const auto bad = [&](const VecX& x, double) {
    VecX y = x;
    if (calls++ == 3) y(0) = std::nan("");
    return y;
  };
  try {
    ukf_predict(b, bad, MatX::Zero(2, 2), 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("ukf_update examples") {
  std::mt19937_64 rng(6);
  const int n = 3;
  const MatX p = oracle::random_spd(rng, n, 0.1, 2.0);
  const VecX m = random_matrix(rng, n, 1);
  const GaussianBelief b(m, p);
  const auto identity = [](const VecX& x) { return x; };

  const VecX z = random_matrix(rng, n, 1);
  const auto exact = ukf_update(b, z, identity, 1e-12 * MatX::Identity(n, n));
  CHECK((exact.belief.mean - z).norm() < 1e-6);

  const MatX h = random_matrix(rng, 2, n);
  const MatX r = oracle::random_spd(rng, 2, 0.05, 1.0);
  const VecX z2 = random_matrix(rng, 2, 1);
  const auto lin = ukf_update(b, z2, [&](const VecX& x) { return VecX(h * x); }, r);
  oracle::LinearKf kf{m, p};
  kf.update(z2, h, r);
  CHECK((lin.belief.mean - kf.mean).norm() < 1e-8);
  CHECK((lin.belief.covariance - kf.cov).norm() < 1e-8);
  CHECK(lin.nis == doctest::Approx(lin.innovation.dot(lin.innovation_cov.ldlt().solve(lin.innovation))));

  const auto zero = ukf_update(b, m, identity, 0.3 * MatX::Identity(n, n));
  CHECK((zero.belief.mean - m).norm() < 1e-10);
  CHECK(zero.belief.covariance.trace() <= p.trace());
  CHECK(zero.innovation.norm() < 1e-10);
}

TEST_CASE("ukf_update: singular innovation covariance is a numeric error") {
  const GaussianBelief b(VecX::Zero(2), MatX::Zero(2, 2));
  CHECK_THROWS_AS(ukf_update(b, VecX::Zero(2), [](const VecX& x) { return x; }, MatX::Zero(2, 2)), NumericError);
}

TEST_CASE("posterior trace never exceeds prior trace for identity measurement") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 6;
    const MatX p = oracle::random_spd(rng, n, 0.01, 5.0);
    const GaussianBelief b(random_matrix(rng, n, 1), p);
    const auto u = ukf_update(b, random_matrix(rng, n, 1), [](const VecX& x) { return x; },
                              oracle::random_spd(rng, n, 0.01, 5.0));
    CHECK(u.belief.covariance.trace() <= p.trace() + 1e-12);
    CHECK((u.belief.covariance - u.belief.covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("linear systems: 100-step UKF matches the closed-form KF") {
  std::mt19937_64 rng(1234);
  double worst_mean = 0.0, worst_cov = 0.0;
  for (int sys = 0; sys < 20; ++sys) {
    const int n = 1 + sys % 6;
    const int m = 1 + sys % 4;
    const MatX f = random_stable(rng, n);
    const MatX h = random_matrix(rng, m, n);
    const MatX q = oracle::random_spd(rng, n, 0.01, 0.2);
    const MatX r = oracle::random_spd(rng, m, 0.05, 0.5);
    const VecX m0 = random_matrix(rng, n, 1);
    const MatX p0 = oracle::random_spd(rng, n, 0.5, 2.0);
    GaussianBelief b(m0, p0);
    oracle::LinearKf kf{m0, p0};
    VecX x = draw(rng, m0, p0);
    for (int k = 0; k < 100; ++k) {
      x = f * x + draw(rng, VecX::Zero(n), q);
      const VecX z = h * x + draw(rng, VecX::Zero(m), r);
      b = ukf_predict(b, [&](const VecX& s, double) { return VecX(f * s); }, q, 0.1);
      b = ukf_update(b, z, [&](const VecX& s) { return VecX(h * s); }, r).belief;
      kf.predict(f, q);
      kf.update(z, h, r);
      worst_mean = std::max(worst_mean, (b.mean - kf.mean).norm());
      worst_cov = std::max(worst_cov, (b.covariance - kf.cov).norm());
      REQUIRE((b.covariance - b.covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  CHECK(worst_mean < 1e-6);
  CHECK(worst_cov < 1e-6);
}

TEST_CASE("NEES consistency over 50 Monte Carlo runs") {
  // Average NEES at each step must sit inside the two-sided 95% chi-square
  // band for 50*n degrees of freedom (scaled by 1/50) on at least 90% of steps.
  const int n = 4, m = 2, runs = 50, steps = 100;
  std::mt19937_64 rng(77);
  const MatX f = random_stable(rng, n);
  const MatX h = random_matrix(rng, m, n);
  const MatX q = oracle::random_spd(rng, n, 0.02, 0.2);
  const MatX r = oracle::random_spd(rng, m, 0.05, 0.3);
  const MatX p0 = MatX::Identity(n, n);
  std::vector<double> nees(steps, 0.0);
  for (int run = 0; run < runs; ++run) {
    VecX x = draw(rng, VecX::Zero(n), p0);
    GaussianBelief b(VecX::Zero(n), p0);
    for (int k = 0; k < steps; ++k) {
      x = f * x + draw(rng, VecX::Zero(n), q);
      const VecX z = h * x + draw(rng, VecX::Zero(m), r);
      b = ukf_predict(b, [&](const VecX& s, double) { return VecX(f * s); }, q, 0.1);
      b = ukf_update(b, z, [&](const VecX& s) { return VecX(h * s); }, r).belief;
      const VecX e = x - b.mean;
      nees[static_cast<std::size_t>(k)] += e.dot(b.covariance.ldlt().solve(e)) / runs;
    }
  }
  const double lo = oracle::chi2_quantile(runs * n, 0.025) / runs;
  const double hi = oracle::chi2_quantile(runs * n, 0.975) / runs;
  int inside = 0;
  for (double v : nees) inside += (v >= lo && v <= hi) ? 1 : 0;
  CHECK(inside >= static_cast<int>(0.9 * steps));
}
