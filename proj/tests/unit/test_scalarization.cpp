#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "morlaif/errors.hpp"
#include "morlaif/scalarization.hpp"

using namespace morlaif;

namespace {

Eigen::VectorXd random_vector(std::mt19937_64& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

CheckedSpec make(Variant v, int n) {
  ScalarizationSpec s;
  s.variant = v;
  if (v == Variant::kWeightedLinear) s.weights = Eigen::VectorXd::Ones(n);
  s.positivity_map = v == Variant::kBernoulliNash;
  return validate_spec(s, n);
}

// Independent reference values computed from sorted copies.
std::vector<double> sorted(const Eigen::VectorXd& r) {
  std::vector<double> v(r.data(), r.data() + r.size());
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("variant names round-trip") {
  for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_FALSE(parse_variant("maxmin").has_value());
}

TEST_CASE("validate_spec rejects bad parameters") {
  ScalarizationSpec s;
  CHECK_THROWS_AS(validate_spec(s, 3), ValidationError);  // linear without weights
  s.weights = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(validate_spec(s, 3), ValidationError);  // wrong length
  s.weights = Eigen::VectorXd::Ones(3);
  s.temperature = 1.0;
  CHECK_THROWS_AS(validate_spec(s, 3), ValidationError);  // foreign parameter

  ScalarizationSpec soft;
  soft.variant = Variant::kSoftMaxMin;
  soft.temperature = 0.0;
  CHECK_THROWS_AS(validate_spec(soft, 3), ValidationError);
  soft.temperature = -1.0;
  CHECK_THROWS_AS(validate_spec(soft, 3), ValidationError);

  ScalarizationSpec uw;
  uw.variant = Variant::kUncertaintyWeighted;
  uw.lambda = -0.1;
  CHECK_THROWS_AS(validate_spec(uw, 3), ValidationError);

  ScalarizationSpec q;
  q.variant = Variant::kLowerQuantile;
  q.alpha = 0.0;
  CHECK_THROWS_AS(validate_spec(q, 3), ValidationError);
  q.alpha = 1.5;
  CHECK_THROWS_AS(validate_spec(q, 3), ValidationError);

  ScalarizationSpec nash;
  nash.variant = Variant::kBernoulliNash;
  CHECK_THROWS_AS(validate_spec(nash, 3), ValidationError);
  CHECK_THROWS_AS(validate_spec(make(Variant::kWorstCase, 1).spec(), 0), ValidationError);
}

TEST_CASE("defaults are filled in") {
  const CheckedSpec soft = make(Variant::kSoftMaxMin, 4);
  CHECK(*soft.spec().temperature == doctest::Approx(kDefaultTemperature));
  const CheckedSpec uw = make(Variant::kUncertaintyWeighted, 12);
  CHECK(*uw.spec().lambda == doctest::Approx(0.5));
  // n / (4 lambda (n - 1)) with n = 12, lambda = 0.5.
  CHECK(uw.clamp_bound() == doctest::Approx(12.0 / 22.0));
  const CheckedSpec q = make(Variant::kLowerQuantile, 12);
  CHECK(*q.spec().alpha == doctest::Approx(1.0 / 3.0));
  CHECK(std::isinf(make(Variant::kWorstCase, 3).clamp_bound()));
}

TEST_CASE("scalarize rejects malformed inputs") {
  const CheckedSpec s = make(Variant::kWorstCase, 3);
  CHECK_THROWS_AS(scalarize(s, Eigen::VectorXd::Zero(2)), ValidationError);
  Eigen::VectorXd nan = Eigen::VectorXd::Zero(3);
  nan(1) = std::nan("");
  CHECK_THROWS_AS(scalarize(s, nan), ValidationError);
  RewardVector bad{{"a", "b"}, Eigen::VectorXd::Zero(3)};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS((RewardVector{{}, Eigen::VectorXd()}.validate()), ValidationError);
}

TEST_CASE("weighted linear and worst case on hand examples") {
  ScalarizationSpec s;
  s.weights = Eigen::Vector3d(1.0, -2.0, 0.5);
  CHECK(scalarize(validate_spec(s, 3), Eigen::Vector3d(2.0, 1.0, 4.0)) == doctest::Approx(2.0));
  CHECK(scalarize(make(Variant::kWorstCase, 3), Eigen::Vector3d(2.0, -1.0, 4.0)) == -1.0);
}

TEST_CASE("soft max-min limits") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::VectorXd r = random_vector(rng, 12, -3.0, 3.0);
    const std::vector<double> v = sorted(r);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 12.0;
    ScalarizationSpec s;
    s.variant = Variant::kSoftMaxMin;
    s.temperature = 1e-4;
    CHECK(std::abs(scalarize(validate_spec(s, 12), r) - v.front()) < 1e-3);
    s.temperature = 1e4;
    CHECK(std::abs(scalarize(validate_spec(s, 12), r) - mean) < 1e-3);
  }
}

TEST_CASE("soft max-min matches the direct formula") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd r = random_vector(rng, 5, -2.0, 2.0);
    long double num = 0, den = 0;
    for (int i = 0; i < 5; ++i) {
      const long double e = std::exp(-static_cast<long double>(r(i)) / 0.7L);
      num += e * r(i);
      den += e;
    }
    CHECK(soft_max_min(r, 0.7) == doctest::Approx(static_cast<double>(num / den)).epsilon(1e-12));
  }
}

TEST_CASE("uncertainty weighted with lambda 0 is the mean exactly") {
  std::mt19937_64 rng(9);
  ScalarizationSpec s;
  s.variant = Variant::kUncertaintyWeighted;
  s.lambda = 0.0;
  const CheckedSpec c = validate_spec(s, 12);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::VectorXd r = random_vector(rng, 12, -5.0, 5.0);
    CHECK(scalarize(c, r) == r.sum() / 12.0);
  }
}

TEST_CASE("uncertainty weighted penalizes spread") {
  // mean 1, population variance 1 for (0, 2).
  CHECK(uncertainty_weighted(Eigen::Vector2d(0.0, 2.0), 0.5) == doctest::Approx(0.5));
}

TEST_CASE("quantile and median conventions match the sort oracle") {
  std::mt19937_64 rng(10);
  for (int n = 1; n <= 13; ++n) {
    ScalarizationSpec q;
    q.variant = Variant::kLowerQuantile;
    const CheckedSpec cq = validate_spec(q, n);
    const CheckedSpec cm = make(Variant::kMaxMedian, n);
    for (int trial = 0; trial < 50; ++trial) {
      const Eigen::VectorXd r = random_vector(rng, n, -4.0, 4.0);
      const std::vector<double> v = sorted(r);
      const int k = std::max(1, static_cast<int>(std::ceil(n / 3.0 - 1e-12)));
      CHECK(scalarize(cq, r) == v[static_cast<size_t>(k - 1)]);
      const double med = n % 2 ? v[static_cast<size_t>(n / 2)]
                               : (v[static_cast<size_t>(n / 2 - 1)] + v[static_cast<size_t>(n / 2)]) / 2.0;
      CHECK(scalarize(cm, r) == med);
    }
  }
  // alpha = 1/3 on 12 principles selects the 4th smallest.
  CHECK(quantile_rank(1.0 / 3.0, 12) == 4);
  CHECK(quantile_rank(1.0, 12) == 12);
  CHECK(quantile_rank(0.01, 12) == 1);
}

TEST_CASE("bernoulli nash applies the positivity map") {
  const Eigen::Vector2d r(0.3, -1.2);
  const double expected = std::sqrt(1.0 / (1.0 + std::exp(-0.3)) * 1.0 / (1.0 + std::exp(1.2)));
  CHECK(scalarize(make(Variant::kBernoulliNash, 2), r) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("bernoulli nash ranking is invariant to per-principle rescaling") {
  std::mt19937_64 rng(11);
  int violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Eigen::VectorXd u = random_vector(rng, 12, 0.01, 1.0);
    const Eigen::VectorXd v = random_vector(rng, 12, 0.01, 1.0);
    const Eigen::VectorXd c = random_vector(rng, 12, 0.1, 10.0);
    const double a = bernoulli_nash(u) - bernoulli_nash(v);
    const double b = bernoulli_nash(c.cwiseProduct(u).eval()) - bernoulli_nash(c.cwiseProduct(v).eval());
    // Rescaling multiplies both sides by the same positive factor; only
    // near-ties could flip through rounding.
    if (std::abs(a) > 1e-12 && (a > 0) != (b > 0)) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("monotonicity within documented domains") {
  std::mt19937_64 rng(12);
  const int n = 12;
  for (Variant var : kAllVariants) {
    CAPTURE(to_string(var));
    const CheckedSpec spec = make(var, n);
    int violations = 0;
    for (int trial = 0; trial < 2000; ++trial) {
      Eigen::VectorXd r;
      if (var == Variant::kSoftMaxMin) {
        // Monotone where max - min <= temperature.
        r = random_vector(rng, n, 0.0, *spec.spec().temperature * 0.9);
      } else if (var == Variant::kUncertaintyWeighted) {
        r = random_vector(rng, n, -spec.clamp_bound(), spec.clamp_bound());
      } else {
        r = random_vector(rng, n, -4.0, 4.0);
      }
      const int i = static_cast<int>(rng() % n);
      Eigen::VectorXd up = r;
      up(i) += var == Variant::kSoftMaxMin ? 0.05 * *spec.spec().temperature : 0.05;
      if (var == Variant::kUncertaintyWeighted) up(i) = std::min(up(i), spec.clamp_bound());
      if (scalarize(spec, up) < scalarize(spec, r) - 1e-12) ++violations;
    }
    CHECK(violations == 0);
  }
}

TEST_CASE("uncertainty weighted is clamped outside its monotone domain") {
  const CheckedSpec spec = make(Variant::kUncertaintyWeighted, 12);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(12);
  r(0) = 5.0;
  Eigen::VectorXd at_bound = r;
  at_bound(0) = spec.clamp_bound();
  CHECK(scalarize(spec, r) == doctest::Approx(scalarize(spec, at_bound)));
  Eigen::VectorXd bigger = r;
  bigger(0) = 50.0;
  CHECK(scalarize(spec, bigger) >= scalarize(spec, r) - 1e-12);
}

TEST_CASE("soft max-min is not monotone outside its domain") {
  // Documented failure mode: a large entry far above the temperature band.
  const Eigen::Vector2d r(0.0, 1.0);
  const Eigen::Vector2d up(0.0, 3.0);
  CHECK(soft_max_min(up, 0.1) < soft_max_min(r, 0.1) + 1e-3);
}

TEST_CASE("batch and row forms agree") {
  std::mt19937_64 rng(13);
  const CheckedSpec spec = make(Variant::kMaxMedian, 4);
  Eigen::MatrixXd rows(6, 4);
  std::vector<RewardVector> vecs;
  for (int i = 0; i < 6; ++i) {
    rows.row(i) = random_vector(rng, 4, -1, 1).transpose();
    vecs.push_back({{"a", "b", "c", "d"}, rows.row(i).transpose()});
  }
  const Eigen::VectorXd out = scalarize_rows(spec, rows);
  const std::vector<double> batch = scalarize_batch(spec, vecs);
  for (int i = 0; i < 6; ++i) {
    CHECK(out(i) == scalarize(spec, rows.row(i).transpose().eval()));
    CHECK(batch[static_cast<size_t>(i)] == out(i));
  }
  CHECK_THROWS_AS(scalarize_rows(spec, Eigen::MatrixXd::Zero(2, 3)), ValidationError);
}
