#ifndef MORLAIF_SCALARIZATION_HPP_
#define MORLAIF_SCALARIZATION_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "morlaif/errors.hpp"

namespace morlaif {

enum class Variant {
  kWeightedLinear,
  kWorstCase,
  kSoftMaxMin,
  kUncertaintyWeighted,
  kLowerQuantile,
  kMaxMedian,
  kBernoulliNash,
};

inline constexpr Variant kAllVariants[] = {
    Variant::kWeightedLinear, Variant::kWorstCase,     Variant::kSoftMaxMin,
    Variant::kUncertaintyWeighted, Variant::kLowerQuantile, Variant::kMaxMedian,
    Variant::kBernoulliNash};

// Lower-snake names used in configuration files and reports.
std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

inline constexpr double kDefaultTemperature = 1.0;
inline constexpr double kDefaultLambda = 0.5;
inline constexpr double kDefaultAlpha = 1.0 / 3.0;

// Per-principle scores for one (prompt, response).
struct RewardVector {
  std::vector<std::string> principle_ids;
  Eigen::VectorXd values;

  Eigen::Index size() const { return values.size(); }
  // Throws ValidationError on empty, mismatched or non-finite content.
  void validate() const;
};

struct ScalarizationSpec {
  Variant variant = Variant::kWeightedLinear;
  std::optional<Eigen::VectorXd> weights;
  std::optional<double> temperature;
  std::optional<double> lambda;
  std::optional<double> alpha;
  bool positivity_map = false;
};

// A spec that passed validate_spec for a fixed principle count. All optional
// parameters demanded by the variant are filled in.
class CheckedSpec {
 public:
  const ScalarizationSpec& spec() const { return spec_; }
  Variant variant() const { return spec_.variant; }
  Eigen::Index principle_count() const { return n_; }
  // Inputs to UncertaintyWeighted are clamped to [-clamp_bound, clamp_bound];
  // +inf for every other variant.
  double clamp_bound() const { return clamp_; }

 private:
  friend CheckedSpec validate_spec(const ScalarizationSpec&, Eigen::Index);
  CheckedSpec(ScalarizationSpec s, Eigen::Index n, double clamp)
      : spec_(std::move(s)), n_(n), clamp_(clamp) {}

  ScalarizationSpec spec_;
  Eigen::Index n_;
  double clamp_;
};

CheckedSpec validate_spec(const ScalarizationSpec& spec, Eigen::Index n_principles);

// Largest c such that mean - lambda * popvar is nondecreasing in every
// coordinate on [-c, c]^n.
inline double uncertainty_clamp_bound(double lambda, Eigen::Index n) {
  if (lambda <= 0.0 || n <= 1) return std::numeric_limits<double>::infinity();
  return static_cast<double>(n) / (4.0 * lambda * static_cast<double>(n - 1));
}

template <typename Scalar>
Scalar logistic(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

// The aggregation functions themselves, on any Eigen column expression.

template <typename Derived, typename WeightDerived>
typename Derived::Scalar weighted_linear(const Eigen::MatrixBase<Derived>& r,
                                         const Eigen::MatrixBase<WeightDerived>& w) {
  return w.dot(r);
}

template <typename Derived>
typename Derived::Scalar worst_case(const Eigen::MatrixBase<Derived>& r) {
  return r.minCoeff();
}

// softmin-weighted average. Nondecreasing in each argument wherever
// max(r) - min(r) <= temperature; outside that band raising a large entry can
// lower the value.
template <typename Derived>
typename Derived::Scalar soft_max_min(const Eigen::MatrixBase<Derived>& r,
                                      typename Derived::Scalar temperature) {
  using Scalar = typename Derived::Scalar;
  const Scalar lo = r.minCoeff();
  const auto e = ((lo - r.array()) / temperature).exp().eval();
  return (e * r.array()).sum() / e.sum();
}

// Mean minus lambda times the population variance.
template <typename Derived>
typename Derived::Scalar uncertainty_weighted(const Eigen::MatrixBase<Derived>& r,
                                              typename Derived::Scalar lambda) {
  using Scalar = typename Derived::Scalar;
  const Scalar n = static_cast<Scalar>(r.size());
  const Scalar mean = r.sum() / n;
  const Scalar var = (r.array() - mean).square().sum() / n;
  return mean - lambda * var;
}

// k-th smallest with k = ceil(alpha * n), clamped to [1, n].
inline Eigen::Index quantile_rank(double alpha, Eigen::Index n) {
  auto k = static_cast<Eigen::Index>(std::ceil(alpha * static_cast<double>(n) - 1e-9));
  return std::clamp<Eigen::Index>(k, 1, n);
}

template <typename Derived>
typename Derived::Scalar lower_quantile(const Eigen::MatrixBase<Derived>& r, double alpha) {
  using Scalar = typename Derived::Scalar;
  std::vector<Scalar> v(static_cast<size_t>(r.size()));
  for (Eigen::Index i = 0; i < r.size(); ++i) v[static_cast<size_t>(i)] = r(i);
  const auto k = static_cast<size_t>(quantile_rank(alpha, r.size()) - 1);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

// Even length: mean of the two middle order statistics.
template <typename Derived>
typename Derived::Scalar max_median(const Eigen::MatrixBase<Derived>& r) {
  using Scalar = typename Derived::Scalar;
  std::vector<Scalar> v(static_cast<size_t>(r.size()));
  for (Eigen::Index i = 0; i < r.size(); ++i) v[static_cast<size_t>(i)] = r(i);
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return (v[n / 2 - 1] + v[n / 2]) / Scalar(2);
}

// Geometric mean; every entry must be strictly positive.
template <typename Derived>
typename Derived::Scalar bernoulli_nash(const Eigen::MatrixBase<Derived>& u) {
  using Scalar = typename Derived::Scalar;
  return std::exp(u.array().log().sum() / static_cast<Scalar>(u.size()));
}

double scalarize(const CheckedSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& values);
double scalarize(const CheckedSpec& spec, const RewardVector& r);

std::vector<double> scalarize_batch(const CheckedSpec& spec, const std::vector<RewardVector>& rows);
// One row per sample, one column per principle.
Eigen::VectorXd scalarize_rows(const CheckedSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& rows);

}  // namespace morlaif

#endif  // MORLAIF_SCALARIZATION_HPP_
