#include <doctest.h>

#include <cmath>
#include <random>

#include "oodbound/boundary.hpp"
#include "oodbound/error.hpp"
#include "oracles.hpp"

using namespace oodbound;

TEST_CASE("compute_centroids takes per-class means") {
  std::vector<std::string> labels{"a", "b"};
  std::vector<ProjectedSample> one{{Eigen::Vector2d(1, 2), 0}, {Eigen::Vector2d(-3, 4), 1}};
  auto g = compute_centroids(one, labels);
  CHECK((g[0].centroid.array() == Eigen::Array2d(1, 2)).all());
  CHECK((g[1].centroid.array() == Eigen::Array2d(-3, 4)).all());
  CHECK(g[0].count == 1);

  std::vector<ProjectedSample> two{{Eigen::Vector2d(1, 2), 0}, {Eigen::Vector2d(3, -2), 0}, {Eigen::Vector2d(5, 5), 1}};
  g = compute_centroids(two, labels);
  CHECK((g[0].centroid.array() == Eigen::Array2d(2, 0)).all());
  CHECK(g[0].count == 2);
}

TEST_CASE("compute_centroids agrees with a reversed compensated sum") {
  std::mt19937_64 rng(50);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::vector<ProjectedSample> pts;
  std::vector<Eigen::VectorXd> raw;
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd v(7);
    for (auto& e : v) e = normal(rng);
    raw.push_back(v);
    pts.push_back({v, 0});
  }
  pts.push_back({Eigen::VectorXd::Ones(7), 1});
  std::vector<std::string> labels{"a", "b"};
  const auto g = compute_centroids(pts, labels);
  CHECK((g[0].centroid - oracle::reversed_mean(raw)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("compute_centroids rejects an empty class") {
  std::vector<std::string> labels{"a", "b", "c"};
  std::vector<ProjectedSample> pts{{Eigen::Vector2d(1, 2), 0}, {Eigen::Vector2d(1, 2), 2}};
  CHECK_THROWS_AS(compute_centroids(pts, labels), DataError);
}

TEST_CASE("norm_euclid spot values") {
  Eigen::Vector3d x(1.0, -2.0, 0.5);
  CHECK(norm_euclid(x, x) == 0.0);
  CHECK(norm_euclid(x, -x) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(norm_euclid(x, 3.7 * x) == doctest::Approx(0.0));
  CHECK_THROWS_AS(norm_euclid(x, Eigen::Vector3d::Zero()), NumericError);
}

TEST_CASE("norm_euclid is a metric on the sphere") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  auto draw = [&] {
    Eigen::VectorXd v(5);
    for (auto& e : v) e = normal(rng);
    return v;
  };
  for (int t = 0; t < 200; ++t) {
    const auto a = draw(), b = draw(), c = draw();
    const double ab = norm_euclid(a, b);
    CHECK(ab == doctest::Approx(norm_euclid(b, a)).epsilon(1e-15));
    CHECK(ab >= 0.0);
    CHECK(ab <= 2.0 + 1e-15);
    CHECK(ab <= norm_euclid(a, c) + norm_euclid(c, b) + 1e-12);
  }
}

TEST_CASE("beta is the outside-to-inside count ratio") {
  CHECK(beta(100, 400) == 4.0);
  CHECK(beta(7, 7) == 1.0);
  // Balanced 150-class data: every class sees 149 times its own count outside.
  const std::size_t per_class = 100;
  for (std::size_t c = 0; c < 150; ++c) CHECK(beta(per_class, 149 * per_class) == 149.0);
  CHECK_THROWS_AS(beta(0, 3), DataError);
  CHECK_THROWS_AS(beta(3, 0), DataError);
}

TEST_CASE("criterion_F spot values") {
  std::vector<double> ind{0.1, 0.3, 0.2};
  std::vector<double> ood{0.9, 1.4};
  CHECK(criterion_F(ind, ood, 0.0, 2.5) == doctest::Approx(1.15 + 2.5 * 0.2).epsilon(1e-14));

  // Constant distances: F(r) = (A - r) + beta (B - r).
  std::vector<double> b_const(4, 0.2), a_const(9, 1.0);
  for (double r : {0.0, 0.1, 0.36, 0.9}) {
    CHECK(criterion_F(b_const, a_const, r, 4.0) == doctest::Approx((1.0 - r) + 4.0 * (0.2 - r)).epsilon(1e-13));
  }
  CHECK(std::abs(criterion_F(b_const, a_const, 0.36, 4.0)) <= 1e-12);
  CHECK_THROWS_AS(criterion_F({}, a_const, 0.1, 1.0), DataError);
}

TEST_CASE("closed_form_radius") {
  CHECK(closed_form_radius(0.7, 0.7, 3.0) == doctest::Approx(0.7));
  CHECK(closed_form_radius(1.0, 0.2, 4.0) == doctest::Approx(0.36).epsilon(1e-15));
  CHECK(std::abs(closed_form_radius(1.0, 0.2, 1e6) - 0.2) <= 1e-5);
}

TEST_CASE("closed-form radius moves with beta according to the sign of B - A") {
  for (auto [a, b] : {std::pair{1.0, 0.2}, std::pair{0.3, 0.8}}) {
    double prev = closed_form_radius(a, b, 0.1);
    for (double w = 0.2; w < 200.0; w *= 1.5) {
      const double cur = closed_form_radius(a, b, w);
      if (b < a) CHECK(cur < prev);
      else CHECK(cur > prev);
      prev = cur;
    }
  }
}

TEST_CASE("search_radius lands on the first grid point past the root") {
  BoundaryParams params;
  {
    std::vector<double> ind(5, 0.0), ood(5, 1.0);
    const auto fit = search_radius(ind, ood, 1.0, params);
    CHECK(fit.converged);
    CHECK(fit.radius >= 0.5);
    CHECK(fit.radius <= 0.5 + params.step);
  }
  {
    std::vector<double> ind(3, 0.2), ood(6, 1.0);
    const auto fit = search_radius(ind, ood, 4.0, params);
    CHECK(fit.radius >= 0.360 - 1e-12);
    CHECK(fit.radius <= 0.361 + 1e-12);
  }
  {
    BoundaryParams coarse;
    coarse.step = 2.0;
    std::vector<double> ind(3, 0.2), ood(6, 1.0);
    CHECK(search_radius(ind, ood, 4.0, coarse).radius == 2.0);
  }
  {
    // All distances zero: F(0) = 0 already.
    std::vector<double> zeros(3, 0.0);
    const auto fit = search_radius(zeros, zeros, 1.0, params);
    CHECK(fit.radius == 0.0);
    CHECK(fit.iterations == 0);
  }
}

TEST_CASE("search_radius flags non-convergence instead of failing") {
  BoundaryParams params;
  params.max_iter = 10;
  std::vector<double> ind(3, 0.5), ood(3, 1.5);
  const auto fit = search_radius(ind, ood, 1.0, params);
  CHECK_FALSE(fit.converged);
  CHECK(fit.radius == doctest::Approx(10 * params.step));
}

TEST_CASE("fit_radius agrees with the closed form over random geometry") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal;
  std::vector<std::string> labels{"a", "b", "c"};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ProjectedSample> pts;
    Eigen::MatrixXd centers(3, 6);
    for (auto& v : centers.reshaped()) v = normal(rng);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto n = std::uniform_int_distribution<int>(1, 12)(rng);
      for (int i = 0; i < n; ++i) {
        Eigen::VectorXd v = centers.row(static_cast<Eigen::Index>(c)).transpose();
        for (auto& e : v) e += 0.4 * normal(rng);
        pts.push_back({v, c});
      }
    }
    const auto geometry = compute_centroids(pts, labels);
    BoundaryParams params;
    for (std::size_t c = 0; c < 3; ++c) {
      double a = 0, b = 0;
      std::size_t na = 0, nb = 0;
      for (const auto& p : pts) {
        const double d = (p.vector.normalized() - geometry[c].centroid.normalized()).norm();
        if (p.label == c) { b += d; ++nb; } else { a += d; ++na; }
      }
      const double r_star = closed_form_radius(a / na, b / nb, static_cast<double>(na) / nb);
      const auto fit = fit_radius(c, geometry, pts, params);
      CHECK(fit.converged);
      CHECK(fit.radius >= r_star - 1e-12);
      CHECK(fit.radius <= r_star + params.step + 1e-12);
      // F(0) > 0 whenever some distance is positive.
      CHECK(fit.radius > 0.0);
    }
  }
}

TEST_CASE("fit_radius honours the beta override and its guards") {
  std::vector<std::string> labels{"a", "b"};
  std::vector<ProjectedSample> pts{{Eigen::Vector2d(1, 0), 0}, {Eigen::Vector2d(1, 0.2), 0},
                                   {Eigen::Vector2d(0, 1), 1}, {Eigen::Vector2d(-0.1, 1), 1}};
  const auto geometry = compute_centroids(pts, labels);
  BoundaryParams params;
  params.beta_override = 50.0;
  CHECK(fit_radius(0, geometry, pts, params).beta == 50.0);
  params.beta_override.reset();
  CHECK(fit_radius(0, geometry, pts, params).beta == 1.0);

  CHECK_THROWS_AS(fit_radius(5, geometry, pts, params), DataError);
  std::vector<ClassGeometry> single{geometry[0]};
  CHECK_THROWS_AS(fit_radius(0, single, pts, params), DataError);
  params.step = 0.0;
  CHECK_THROWS_AS(fit_radius(0, geometry, pts, params), DataError);
}
