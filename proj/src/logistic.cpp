#include "morlaif/logistic.hpp"

#include <cmath>
#include <string>

#include "morlaif/errors.hpp"
#include "morlaif/scalarization.hpp"

namespace morlaif {
namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

double LogisticProblem::objective(const Eigen::VectorXd& w) const {
  const Eigen::VectorXd z = x * w;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) loss += softplus(z(i)) - y(i) * z(i);
  return loss / static_cast<double>(x.rows()) + 0.5 * l2 * w.squaredNorm();
}

Eigen::VectorXd LogisticProblem::gradient(const Eigen::VectorXd& w) const {
  const Eigen::VectorXd p = (x * w).unaryExpr([](double z) { return logistic(z); });
  return x.transpose() * (p - y) / static_cast<double>(x.rows()) + l2 * w;
}

Eigen::MatrixXd LogisticProblem::hessian(const Eigen::VectorXd& w) const {
  const Eigen::VectorXd p = (x * w).unaryExpr([](double z) { return logistic(z); });
  const Eigen::VectorXd s = p.array() * (1.0 - p.array());
  Eigen::MatrixXd h = x.transpose() * s.asDiagonal() * x / static_cast<double>(x.rows());
  h.diagonal().array() += l2;
  return h;
}

LogisticSolution solve_logistic(const LogisticProblem& problem, double gradient_tolerance,
                                int max_iterations) {
  if (problem.x.rows() == 0) throw ValidationError("logistic: empty design matrix");
  LogisticSolution sol;
  sol.w = Eigen::VectorXd::Zero(problem.x.cols());
  double loss = problem.objective(sol.w);
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd g = problem.gradient(sol.w);
    sol.gradient_norm = g.norm();
    sol.iterations = it;
    sol.loss = loss;
    if (sol.gradient_norm < gradient_tolerance) return sol;

    const Eigen::LDLT<Eigen::MatrixXd> ldlt(problem.hessian(sol.w));
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
      throw ConvergenceError("logistic: singular Hessian (degenerate or separable data without regularization)");
    const Eigen::VectorXd step = ldlt.solve(g);

    // Armijo backtracking.
    double t = 1.0;
    const double slope = g.dot(step);
    Eigen::VectorXd next = sol.w - step;
    double next_loss = problem.objective(next);
    while (next_loss > loss - 1e-4 * t * slope && t > 1e-10) {
      t *= 0.5;
      next = sol.w - t * step;
      next_loss = problem.objective(next);
    }
    sol.w = next;
    loss = next_loss;
  }
  const Eigen::VectorXd g = problem.gradient(sol.w);
  sol.gradient_norm = g.norm();
  sol.loss = loss;
  sol.iterations = max_iterations;
  if (sol.gradient_norm < gradient_tolerance) return sol;
  throw ConvergenceError("logistic: no convergence after " + std::to_string(max_iterations) +
                         " iterations (gradient norm " + std::to_string(sol.gradient_norm) + ")");
}

}  // namespace morlaif
