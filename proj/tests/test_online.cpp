#include "reflex/errors.hpp"
#include "reflex/online.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

using namespace reflex;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }
Vector vscalar(double v) { return Vector::Constant(1, v); }

LinearGaussianModel scalar_model(double f, double h, double q, double r) {
  return {scalar(f), scalar(h), scalar(q), scalar(r)};
}

bool is_spd(const Matrix& m) {
  if (!m.isApprox(m.transpose(), 1e-12)) return false;
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

} // namespace

TEST_CASE("conjugate update examples") {
  auto b = beta_parameters(conjugate_update(beta_bernoulli(1, 1), 1.0));
  CHECK(b.a == 2.0);
  CHECK(b.b == 1.0);
  auto g = gamma_parameters(conjugate_update(gamma_poisson(2.5, 0.5), 4.0));
  CHECK(g.shape == 6.5);
  CHECK(g.rate == 1.5);
  // N(0, 1) prior, σ² = 1, one observation 2 → N(1, 1/2).
  auto n = normal_parameters(conjugate_update(gaussian_known_variance(0.0, 1.0, 1.0), 2.0));
  CHECK(n.mean == doctest::Approx(1.0));
  CHECK(n.variance == doctest::Approx(0.5));
  CHECK(posterior_mean(beta_bernoulli(2, 6)) == doctest::Approx(0.25));
  CHECK(posterior_mean(gamma_poisson(3, 2)) == doctest::Approx(1.5));
}

TEST_CASE("conjugate domain errors") {
  CHECK_THROWS_AS(conjugate_update(beta_bernoulli(1, 1), 0.5), DomainError);
  CHECK_THROWS_AS(conjugate_update(gamma_poisson(1, 1), -1.0), DomainError);
  CHECK_THROWS_AS(conjugate_update(gamma_poisson(1, 1), 1.5), DomainError);
  CHECK_THROWS_AS(conjugate_update(gaussian_known_variance(0, 1, 1), std::nan("")), DomainError);
  CHECK_THROWS_AS(beta_bernoulli(0, 1), PreconditionError);
}

TEST_CASE("property: sequential updates equal the batch update and ignore order") {
  oracle::Gen g(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + g.index(40);
    std::vector<double> bern, pois, gauss;
    for (std::size_t i = 0; i < n; ++i) {
      bern.push_back(g.bit());
      pois.push_back(double(g.index(20)));
      gauss.push_back(double(g.index(2000)) / 8.0 - 100.0); // exactly representable sums
    }
    for (auto [prior, data] : {std::pair{beta_bernoulli(1, 1), &bern},
                               std::pair{gamma_poisson(2, 1), &pois},
                               std::pair{gaussian_known_variance(0.5, 2.0, 4.0), &gauss}}) {
      NaturalParams seq = prior;
      for (double x : *data) seq = conjugate_update(seq, x);
      auto batch = conjugate_update(prior, std::span<const double>(*data));
      CHECK(seq == batch);
      std::vector<double> shuffled = *data;
      std::shuffle(shuffled.begin(), shuffled.end(), g.engine());
      CHECK(conjugate_update(prior, std::span<const double>(shuffled)) == batch);
    }
  }
}

TEST_CASE("posterior draws have the posterior mean") {
  Stream rng(1, StreamTag::Test);
  for (const auto& p : {beta_bernoulli(3, 5), gamma_poisson(4, 2), gaussian_known_variance(1.0, 0.5, 2.0)}) {
    double s = 0.0, s2 = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
      double x = sample_parameter(p, rng);
      s += x;
      s2 += x * x;
    }
    double m = s / n, sd = std::sqrt(s2 / n - m * m);
    CHECK(std::abs(m - posterior_mean(p)) < 4.0 * sd / std::sqrt(double(n)));
  }
}

TEST_CASE("kalman predict examples") {
  GaussianBelief b{vscalar(1.0), scalar(1.0)};
  auto p = kalman_predict(b, scalar_model(2.0, 1.0, 0.5, 1.0));
  CHECK(p.mean(0) == doctest::Approx(2.0));
  CHECK(p.covariance(0, 0) == doctest::Approx(4.5));

  GaussianBelief b2{Vector::Constant(2, 3.0), Matrix::Identity(2, 2) * 2.0};
  LinearGaussianModel ident{Matrix::Identity(2, 2), Matrix::Identity(2, 2), Matrix::Zero(2, 2),
                            Matrix::Identity(2, 2)};
  auto same = kalman_predict(b2, ident);
  CHECK(same.mean == b2.mean);
  CHECK(same.covariance == b2.covariance);

  LinearGaussianModel reset{Matrix::Zero(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                            Matrix::Identity(2, 2)};
  auto r = kalman_predict(b2, reset);
  CHECK(r.mean.isZero());
  CHECK(r.covariance.isApprox(Matrix::Identity(2, 2)));
}

TEST_CASE("kalman update examples") {
  GaussianBelief prior{vscalar(0.0), scalar(1.0)};
  auto u = kalman_update(prior, scalar_model(1, 1, 0, 1), vscalar(2.0));
  CHECK(u.belief.mean(0) == doctest::Approx(1.0));
  CHECK(u.belief.covariance(0, 0) == doctest::Approx(0.5));
  CHECK(u.innovation(0) == doctest::Approx(2.0));

  auto none = kalman_update(prior, scalar_model(1, 0, 0, 1), vscalar(5.0));
  CHECK(none.belief.mean(0) == 0.0);
  CHECK(none.belief.covariance(0, 0) == 1.0);

  auto sharp = kalman_update(prior, scalar_model(1, 1, 0, 1e-12), vscalar(3.0));
  CHECK(sharp.belief.mean(0) == doctest::Approx(3.0).epsilon(1e-9));

  CHECK_THROWS_AS(kalman_update(GaussianBelief{vscalar(0), scalar(0)}, scalar_model(1, 1, 0, 0), vscalar(1)),
                  SingularInnovation);
}

TEST_CASE("static-parameter Kalman filter equals the batch Gaussian posterior") {
  oracle::Gen g(41);
  const std::size_t d = 3, m = 2, n = 100;
  Matrix h(m, d);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = g.normal();
  Matrix r = g.spd(m);
  LinearGaussianModel model{Matrix::Identity(d, d), h, Matrix::Zero(d, d), r};
  GaussianBelief prior{g.vector(d), g.spd(d)};
  RowMatrix obs(n, m);
  for (std::size_t t = 0; t < n; ++t) obs.row(t) = g.vector(m, 3.0).transpose();

  auto filtered = kalman_filter(prior, model, obs);
  Matrix rinv = r.inverse();
  Matrix prec = prior.covariance.inverse() + double(n) * h.transpose() * rinv * h;
  Vector rhs = prior.covariance.inverse() * prior.mean;
  for (std::size_t t = 0; t < n; ++t) rhs += h.transpose() * rinv * obs.row(t).transpose();
  Matrix cov = prec.inverse();
  Vector mean = cov * rhs;
  CHECK((filtered.back().mean - mean).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((filtered.back().covariance - cov).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("property: Kalman covariances stay symmetric positive definite") {
  oracle::Gen g(43);
  int steps = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + g.index(4), m = 1 + g.index(3);
    Matrix f(d, d), h(m, d);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = 0.5 * g.normal();
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = g.normal();
    LinearGaussianModel model{f, h, 0.1 * g.spd(d), g.spd(m)};
    GaussianBelief b{g.vector(d), g.spd(d)};
    for (int t = 0; t < 100; ++t, ++steps) {
      b = kalman_predict(b, model);
      REQUIRE(is_spd(b.covariance));
      b = kalman_update(b, model, g.vector(m)).belief;
      REQUIRE(is_spd(b.covariance));
    }
  }
  CHECK(steps == 10000);
}

TEST_CASE("effective sample size examples") {
  CHECK(effective_sample_size(std::vector<double>(100, 0.01)) == doctest::Approx(100.0));
  CHECK(effective_sample_size(std::vector<double>{0, 0, 1, 0}) == doctest::Approx(1.0));
  CHECK(effective_sample_size(std::vector<double>{0.5, 0.5, 0, 0}) == doctest::Approx(2.0));
}

TEST_CASE("systematic resampling") {
  std::vector<double> w{0.1, 0.2, 0.3, 0.4};
  auto idx = systematic_resample(w, 10, 0.5);
  REQUIRE(idx.size() == 10);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  std::vector<int> count(4, 0);
  for (auto i : idx) ++count[i];
  // Offspring counts are within one of N·w_i.
  for (int i = 0; i < 4; ++i) CHECK(std::abs(count[i] - 10 * w[i]) < 1.0 + 1e-12);
  auto one = systematic_resample(std::vector<double>{0, 0, 1}, 5, 0.999);
  CHECK(std::all_of(one.begin(), one.end(), [](std::size_t i) { return i == 2; }));
}

TEST_CASE("particle filter: constant likelihood keeps uniform weights") {
  auto model = scalar_model(0.9, 1, 1, 1);
  auto e = gaussian_ensemble({vscalar(0), scalar(1)}, 1000, 3);
  auto flat = [](const Vector&, const Vector&) { return 0.0; };
  auto s = pf_step(e, linear_gaussian_transition(model), flat, vscalar(0.0), 500.0, 3, 1, 1);
  CHECK_FALSE(s.resampled);
  CHECK(s.ess == doctest::Approx(1000.0));
  for (Eigen::Index i = 0; i < 1000; ++i) CHECK(s.ensemble.weights(i) == doctest::Approx(1e-3));
}

TEST_CASE("particle filter: a single surviving particle takes over") {
  auto e = gaussian_ensemble({vscalar(0), scalar(1)}, 200, 4);
  const double chosen = e.particles(17, 0);
  auto stay = [](const Vector& prev, Stream&, Vector& out) { out = prev; };
  auto only = [chosen](const Vector& x, const Vector&) { return x(0) == chosen ? 0.0 : -std::numeric_limits<double>::infinity(); };
  auto s = pf_step(e, stay, only, vscalar(0.0), 100.0, 4, 1, 1);
  CHECK(s.ess == doctest::Approx(1.0));
  CHECK(s.resampled);
  for (Eigen::Index i = 0; i < 200; ++i) CHECK(s.ensemble.particles(i, 0) == chosen);
  auto none = [](const Vector&, const Vector&) { return -std::numeric_limits<double>::infinity(); };
  CHECK_THROWS_AS(pf_step(e, stay, none, vscalar(0.0), 100.0, 4, 1, 1), DegeneracyError);
}

TEST_CASE("property: particle weights are normalised and ESS lies in [1, N]") {
  oracle::Gen g(47);
  for (int trial = 0; trial < 30; ++trial) {
    auto model = scalar_model(g.real(-1, 1), g.real(0.5, 2), g.real(0.1, 2), g.real(0.1, 2));
    const std::size_t n = 50 + g.index(500);
    auto e = gaussian_ensemble({vscalar(g.normal()), scalar(g.real(0.5, 3))}, n, trial);
    for (std::uint64_t t = 1; t <= 5; ++t) {
      auto s = pf_step(e, linear_gaussian_transition(model), linear_gaussian_likelihood(model),
                       vscalar(3.0 * g.normal()), 0.5 * double(n), trial, t, 1);
      CHECK(s.ensemble.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(s.ensemble.weights.minCoeff() >= 0.0);
      CHECK(s.ess >= 1.0 - 1e-12);
      CHECK(s.ess <= double(n) + 1e-9);
      e = s.ensemble;
    }
  }
}

TEST_CASE("particle filter is identical across worker counts") {
  LinearGaussianModel model{Matrix::Identity(2, 2) * 0.8, Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                            Matrix::Identity(2, 2) * 0.5};
  auto traj = simulate_linear_gaussian(model, Vector::Zero(2), 20, 5);
  auto a = gaussian_ensemble({Vector::Zero(2), Matrix::Identity(2, 2)}, 3000, 5);
  auto b = a, c = a;
  for (std::uint64_t t = 0; t < 20; ++t) {
    Vector y = traj.observations.row(t).transpose();
    auto sa = pf_step(a, linear_gaussian_transition(model), linear_gaussian_likelihood(model), y, 1500, 5, t, 1);
    auto sb = pf_step(b, linear_gaussian_transition(model), linear_gaussian_likelihood(model), y, 1500, 5, t, 8);
    auto sc = pf_step_serial(c, linear_gaussian_transition(model), linear_gaussian_likelihood(model), y, 1500, 5, t);
    REQUIRE(sa.ensemble.particles == sb.ensemble.particles);
    REQUIRE(sa.ensemble.weights == sb.ensemble.weights);
    REQUIRE(sa.ensemble.particles == sc.ensemble.particles);
    REQUIRE(sa.ensemble.weights == sc.ensemble.weights);
    a = sa.ensemble;
    b = sb.ensemble;
    c = sc.ensemble;
  }
}

TEST_CASE("particle filter tracks the Kalman filter") {
  auto model = scalar_model(0.9, 1, 1, 1);
  auto traj = simulate_linear_gaussian(model, vscalar(0), 50, 6);
  GaussianBelief prior{vscalar(0), scalar(1)};
  auto kf = kalman_filter(prior, model, traj.observations);
  // The filter predicts first, so the ensemble starts from the time-0 prior.
  auto e = gaussian_ensemble(prior, 5000, 6);
  double sse = 0.0;
  for (std::size_t t = 0; t < 50; ++t) {
    auto s = pf_step(e, linear_gaussian_transition(model), linear_gaussian_likelihood(model),
                     traj.observations.row(t).transpose(), 2500, 6, t, 1);
    e = s.ensemble;
    double diff = ensemble_moments(e).mean(0) - kf[t].mean(0);
    sse += diff * diff;
  }
  CHECK(std::sqrt(sse / 50) < 0.1);
}

TEST_CASE("model validation") {
  LinearGaussianModel bad{scalar(1), scalar(1), scalar(-1), scalar(1)};
  CHECK_THROWS(bad.validate());
  LinearGaussianModel shape{Matrix::Identity(2, 2), Matrix::Identity(1, 1), Matrix::Identity(2, 2), scalar(1)};
  CHECK_THROWS(shape.validate());
}
