#include <doctest.h>

#include <cmath>

#include "morlaif/errors.hpp"
#include "morlaif/logistic.hpp"
#include "morlaif/random.hpp"

using namespace morlaif;

namespace {

LogisticProblem random_problem(int n, int d, double l2, std::uint64_t seed) {
  Rng rng(seed);
  LogisticProblem p;
  p.x.resize(n, d);
  p.y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) p.x(i, j) = standard_normal(rng);
    const double u = uniform01(rng);
    p.y(i) = u < 0.1 ? 0.5 : (u < 0.55 ? 1.0 : 0.0);
  }
  p.l2 = l2;
  return p;
}

}  // namespace

TEST_CASE("gradient and Hessian agree with central differences") {
  const LogisticProblem p = random_problem(50, 4, 0.01, 3);
  Rng rng(4);
  Eigen::VectorXd w(4);
  for (int j = 0; j < 4; ++j) w(j) = standard_normal(rng);
  const double h = 1e-5;
  const Eigen::VectorXd g = p.gradient(w);
  const Eigen::MatrixXd hess = p.hessian(w);
  for (int j = 0; j < 4; ++j) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(4);
    e(j) = h;
    const double fd = (p.objective(w + e) - p.objective(w - e)) / (2 * h);
    CHECK(std::abs(fd - g(j)) < 1e-7);
    const Eigen::VectorXd fdg = (p.gradient(w + e) - p.gradient(w - e)) / (2 * h);
    CHECK((fdg - hess.col(j)).norm() < 1e-6);
  }
}

TEST_CASE("solver reaches a stationary point") {
  const LogisticProblem p = random_problem(400, 5, 1e-3, 5);
  const LogisticSolution s = solve_logistic(p);
  CHECK(p.gradient(s.w).norm() < 1e-6);
  CHECK(s.gradient_norm < 1e-6);
  CHECK(s.loss == doctest::Approx(p.objective(s.w)));
  // Small perturbations never lower the objective.
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd d(5);
    for (int j = 0; j < 5; ++j) d(j) = 1e-3 * standard_normal(rng);
    CHECK(p.objective(s.w + d) >= s.loss - 1e-12);
  }
}

TEST_CASE("all-half targets give the zero solution") {
  LogisticProblem p = random_problem(30, 3, 0.0, 7);
  p.y.setConstant(0.5);
  CHECK(solve_logistic(p).w.norm() < 1e-9);
}

TEST_CASE("separable data drives the unregularized weight far out") {
  LogisticProblem p;
  p.x = Eigen::MatrixXd(4, 1);
  p.x << 1, 2, 3, 4;
  p.y = Eigen::VectorXd::Ones(4);
  const LogisticSolution free = solve_logistic(p, 1e-6, 200);
  CHECK(free.w(0) > 5.0);
  CHECK_THROWS_AS(solve_logistic(p, 1e-12, 3), ConvergenceError);
  p.l2 = 0.1;
  const LogisticSolution s = solve_logistic(p);
  CHECK(s.w(0) > 0.0);
  CHECK(s.w(0) < free.w(0));
}

TEST_CASE("empty design is rejected") {
  LogisticProblem p;
  p.x.resize(0, 3);
  p.y.resize(0);
  CHECK_THROWS_AS(solve_logistic(p), ValidationError);
}
