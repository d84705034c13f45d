#include "morlaif/scalarization.hpp"

#include <array>
#include <string>
#include <utility>

namespace morlaif {
namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 7> kNames{{
    {Variant::kWeightedLinear, "weighted_linear"},
    {Variant::kWorstCase, "worst_case"},
    {Variant::kSoftMaxMin, "soft_max_min"},
    {Variant::kUncertaintyWeighted, "uncertainty_weighted"},
    {Variant::kLowerQuantile, "lower_quantile"},
    {Variant::kMaxMedian, "max_median"},
    {Variant::kBernoulliNash, "bernoulli_nash"},
}};

void reject(const std::string& what) { throw ValidationError("scalarization: " + what); }

}  // namespace

std::string_view to_string(Variant v) {
  for (const auto& [variant, name] : kNames)
    if (variant == v) return name;
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (const auto& [variant, n] : kNames)
    if (n == name) return variant;
  return std::nullopt;
}

void RewardVector::validate() const {
  if (values.size() == 0) reject("empty reward vector");
  if (static_cast<Eigen::Index>(principle_ids.size()) != values.size())
    reject("principle ids and values differ in length");
  if (!values.allFinite()) reject("reward vector contains NaN or infinite value");
}

CheckedSpec validate_spec(const ScalarizationSpec& spec, Eigen::Index n_principles) {
  if (n_principles < 1) reject("principle count must be positive");
  ScalarizationSpec out = spec;
  const Variant v = spec.variant;

  auto forbid = [&](bool present, const char* param) {
    if (present)
      reject(std::string(param) + " is not a parameter of " + std::string(to_string(v)));
  };
  forbid(spec.weights.has_value() && v != Variant::kWeightedLinear, "weights");
  forbid(spec.temperature.has_value() && v != Variant::kSoftMaxMin, "temperature");
  forbid(spec.lambda.has_value() && v != Variant::kUncertaintyWeighted, "lambda");
  forbid(spec.alpha.has_value() && v != Variant::kLowerQuantile, "alpha");

  switch (v) {
    case Variant::kWeightedLinear:
      if (!spec.weights) reject("weighted_linear requires weights");
      if (spec.weights->size() != n_principles)
        reject("weights length " + std::to_string(spec.weights->size()) +
               " does not match principle count " + std::to_string(n_principles));
      if (!spec.weights->allFinite()) reject("weights must be finite");
      break;
    case Variant::kSoftMaxMin:
      out.temperature = spec.temperature.value_or(kDefaultTemperature);
      if (!(*out.temperature > 0.0) || !std::isfinite(*out.temperature))
        reject("non-positive temperature");
      break;
    case Variant::kUncertaintyWeighted:
      out.lambda = spec.lambda.value_or(kDefaultLambda);
      if (!(*out.lambda >= 0.0) || !std::isfinite(*out.lambda)) reject("negative lambda");
      break;
    case Variant::kLowerQuantile:
      out.alpha = spec.alpha.value_or(kDefaultAlpha);
      if (!(*out.alpha > 0.0 && *out.alpha <= 1.0)) reject("alpha outside (0, 1]");
      break;
    case Variant::kBernoulliNash:
      if (!spec.positivity_map) reject("bernoulli_nash requires the positivity map");
      break;
    case Variant::kWorstCase:
    case Variant::kMaxMedian:
      break;
  }

  const double clamp = v == Variant::kUncertaintyWeighted
                           ? uncertainty_clamp_bound(*out.lambda, n_principles)
                           : std::numeric_limits<double>::infinity();
  return CheckedSpec(std::move(out), n_principles, clamp);
}

double scalarize(const CheckedSpec& checked, const Eigen::Ref<const Eigen::VectorXd>& values) {
  if (values.size() != checked.principle_count())
    reject("reward vector length " + std::to_string(values.size()) +
           " does not match spec principle count " + std::to_string(checked.principle_count()));
  if (values.hasNaN()) reject("NaN reward");

  const ScalarizationSpec& s = checked.spec();
  Eigen::VectorXd r = values;
  if (s.positivity_map) r = r.unaryExpr([](double x) { return logistic(x); });

  switch (s.variant) {
    case Variant::kWeightedLinear:
      return weighted_linear(r, *s.weights);
    case Variant::kWorstCase:
      return worst_case(r);
    case Variant::kSoftMaxMin:
      return soft_max_min(r, *s.temperature);
    case Variant::kUncertaintyWeighted: {
      const double c = checked.clamp_bound();
      if (std::isfinite(c)) r = r.cwiseMax(-c).cwiseMin(c);
      return uncertainty_weighted(r, *s.lambda);
    }
    case Variant::kLowerQuantile:
      return lower_quantile(r, *s.alpha);
    case Variant::kMaxMedian:
      return max_median(r);
    case Variant::kBernoulliNash:
      return bernoulli_nash(r);
  }
  return 0.0;
}

double scalarize(const CheckedSpec& spec, const RewardVector& r) {
  r.validate();
  return scalarize(spec, r.values);
}

std::vector<double> scalarize_batch(const CheckedSpec& spec, const std::vector<RewardVector>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    if (row.size() != spec.principle_count()) reject("inconsistent row lengths in batch");
    out.push_back(scalarize(spec, row));
  }
  return out;
}

Eigen::VectorXd scalarize_rows(const CheckedSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& rows) {
  if (rows.cols() != spec.principle_count()) reject("inconsistent row lengths in batch");
  Eigen::VectorXd out(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out(i) = scalarize(spec, rows.row(i).transpose());
  return out;
}

}  // namespace morlaif
