#ifndef MORLAIF_LOGISTIC_HPP_
#define MORLAIF_LOGISTIC_HPP_

#include <Eigen/Dense>

namespace morlaif {

// L2-regularized logistic regression without intercept on soft targets:
//   L(w) = mean_i [softplus(x_i . w) - y_i x_i . w] + l2/2 |w|^2
// Rows of `x` are pairwise feature differences; the Bradley-Terry likelihood
// P(A) = sigmoid(s(A) - s(B)) has this form.
struct LogisticProblem {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;  // in [0, 1]; 0.5 for ties
  double l2 = 0.0;

  double objective(const Eigen::VectorXd& w) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& w) const;
};

struct LogisticSolution {
  Eigen::VectorXd w;
  int iterations = 0;
  double loss = 0.0;
  double gradient_norm = 0.0;
};

// Damped Newton iterations until |grad| < tolerance. Throws ConvergenceError
// if the cap is hit or the Hessian becomes singular.
LogisticSolution solve_logistic(const LogisticProblem& problem, double gradient_tolerance = 1e-6,
                                int max_iterations = 100);

}  // namespace morlaif

#endif  // MORLAIF_LOGISTIC_HPP_
