#include "morlaif/synthetic_env.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "morlaif/errors.hpp"

namespace morlaif {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("synthetic_env: " + what);
}

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = standard_normal(rng);
  return m;
}

// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign fixed).
Eigen::MatrixXd random_orthogonal(int d, Rng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(d, d, rng));
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

// Factor C = L L^T with L of shape n x d; throws when infeasible.
Eigen::MatrixXd correlation_factor(const Eigen::MatrixXd& c, int d) {
  const Eigen::Index n = c.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  require(ev.minCoeff() > -1e-9, "correlation target is not positive semi-definite (min eigenvalue " +
                                      std::to_string(ev.minCoeff()) + ")");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = n - 1; i >= 0; --i)
    if (ev(i) > 1e-10) keep.push_back(i);
  require(static_cast<int>(keep.size()) <= d,
          "correlation target has rank " + std::to_string(keep.size()) +
              " which exceeds the feature dimension " + std::to_string(d));
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, d);
  for (size_t j = 0; j < keep.size(); ++j)
    l.col(static_cast<Eigen::Index>(j)) = eig.eigenvectors().col(keep[j]) * std::sqrt(ev(keep[j]));
  return l;
}

}  // namespace

std::string_view to_string(PolicyTag tag) {
  switch (tag) {
    case PolicyTag::kSftReference:
      return "sft-reference";
    case PolicyTag::kTrained:
      return "trained";
    case PolicyTag::kOracle:
      return "oracle";
  }
  return "unknown";
}

std::optional<PolicyTag> parse_policy_tag(std::string_view name) {
  for (auto t : {PolicyTag::kSftReference, PolicyTag::kTrained, PolicyTag::kOracle})
    if (to_string(t) == name) return t;
  return std::nullopt;
}

void ResponseSpace::check_index(int prompt, int response) const {
  if (prompt < 0 || prompt >= n_prompts || response < 0 || response >= n_templates)
    throw ValidationError("synthetic_env: index (" + std::to_string(prompt) + ", " +
                          std::to_string(response) + ") out of range");
}

Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

Eigen::VectorXd Policy::log_probabilities(int prompt) const {
  return log_softmax(logits.row(prompt).transpose());
}

Eigen::VectorXd Policy::probabilities(int prompt) const {
  return log_probabilities(prompt).array().exp();
}

int Policy::argmax(int prompt) const {
  Eigen::Index best = 0;
  logits.row(prompt).maxCoeff(&best);  // first maximal index
  return static_cast<int>(best);
}

Eigen::MatrixXd target_correlation(const WorldConfig& cfg) {
  const int n = cfg.n_principles;
  if (cfg.correlation) {
    require(cfg.correlation->rows() == n && cfg.correlation->cols() == n,
            "correlation matrix must be n x n");
    return *cfg.correlation;
  }
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(n, n, cfg.base_correlation);
  if (cfg.sycophancy_mode) {
    require(cfg.sycophancy_index >= 0 && cfg.sycophancy_index < n, "sycophancy index out of range");
    c.row(cfg.sycophancy_index).setConstant(cfg.sycophancy_correlation);
    c.col(cfg.sycophancy_index).setConstant(cfg.sycophancy_correlation);
  }
  c.diagonal().setOnes();
  return c;
}

WorldAndSpace make_world(const WorldConfig& cfg, std::uint64_t seed) {
  const int n = cfg.n_principles;
  const int d = cfg.feature_dim;
  require(n >= 1 && d >= 1 && cfg.n_prompts >= 1, "dimensions must be positive");
  require(cfg.n_templates >= 2, "need at least two templates per prompt");
  require(cfg.judge_temp > 0.0, "judge temperature must be positive");

  const Eigen::MatrixXd c = target_correlation(cfg);
  require((c - c.transpose()).cwiseAbs().maxCoeff() < 1e-12, "correlation target must be symmetric");
  require((c.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12, "correlation target needs a unit diagonal");

  Rng rng = make_rng(seed, {kWorldStream});
  WorldAndSpace out;
  World& w = out.world;
  w.n_principles = n;
  w.feature_dim = d;
  w.seed = seed;
  w.gamma = cfg.gamma;
  w.judge_temp = cfg.judge_temp;
  w.target_correlation = c;

  w.theta = correlation_factor(c, d) * random_orthogonal(d, rng).transpose();
  w.theta.rowwise().normalize();

  if (cfg.annotator_temps) {
    require(cfg.annotator_temps->size() == n, "annotator_temps must have n entries");
    w.annotator_temps = *cfg.annotator_temps;
  } else {
    require(cfg.annotator_temp_min <= cfg.annotator_temp_max, "annotator temperature range is empty");
    if (n == 1)
      w.annotator_temps = Eigen::VectorXd::Constant(1, cfg.annotator_temp_min);
    else
      w.annotator_temps = Eigen::VectorXd::LinSpaced(n, cfg.annotator_temp_min, cfg.annotator_temp_max);
    std::vector<double> t(w.annotator_temps.data(), w.annotator_temps.data() + n);
    std::shuffle(t.begin(), t.end(), rng);
    w.annotator_temps = Eigen::Map<Eigen::VectorXd>(t.data(), n);
  }
  require((w.annotator_temps.array() > 0.0).all(), "annotator temperatures must be positive");

  if (cfg.judge_weights) {
    require(cfg.judge_weights->size() == n, "judge_weights must have n entries");
    w.judge_weights = *cfg.judge_weights;
  } else {
    w.judge_weights.resize(n);
    std::uniform_real_distribution<double> uw(cfg.judge_weight_min, cfg.judge_weight_max);
    for (int i = 0; i < n; ++i) w.judge_weights(i) = uw(rng);
    if (cfg.sycophancy_mode) {
      require(cfg.sycophancy_weight < 0.0, "sycophancy weight must be negative");
      w.judge_weights(cfg.sycophancy_index) = cfg.sycophancy_weight;
    }
    // Unit utility variance under standard normal features.
    const double var = w.judge_weights.dot(c * w.judge_weights);
    require(var > 0.0, "judge utility has zero variance");
    w.judge_weights /= std::sqrt(var);
  }
  if (cfg.sycophancy_mode) w.sycophancy_index = cfg.sycophancy_index;

  ResponseSpace& s = out.space;
  s.n_prompts = cfg.n_prompts;
  s.n_templates = cfg.n_templates;
  Rng feat = make_rng(seed, {kFeatureStream});
  s.prompt_features = gaussian_matrix(cfg.n_prompts, d, feat);
  s.features = gaussian_matrix(static_cast<Eigen::Index>(cfg.n_prompts) * cfg.n_templates, d, feat);
  return out;
}

double principle_score(const World& world, const ResponseSpace& space, int prompt, int response,
                       int principle) {
  space.check_index(prompt, response);
  if (principle < 0 || principle >= world.n_principles)
    throw ValidationError("synthetic_env: principle " + std::to_string(principle) + " out of range");
  return world.theta.row(principle).dot(space.phi(prompt, response));
}

Eigen::VectorXd principle_scores(const World& world, const ResponseSpace& space, int prompt,
                                 int response) {
  space.check_index(prompt, response);
  return world.theta * space.phi(prompt, response).transpose();
}

double true_utility(const World& world, const ResponseSpace& space, int prompt, int response) {
  return world.judge_weights.dot(principle_scores(world, space, prompt, response));
}

SampledResponse sample_response(const Policy& policy, int prompt, Rng& rng) {
  if (prompt < 0 || prompt >= policy.n_prompts())
    throw ValidationError("synthetic_env: prompt " + std::to_string(prompt) + " out of range");
  const Eigen::VectorXd logp = policy.log_probabilities(prompt);
  const double u = uniform01(rng);
  double acc = 0.0;
  int pick = policy.n_templates() - 1;
  for (int k = 0; k < policy.n_templates(); ++k) {
    acc += std::exp(logp(k));
    if (u < acc) {
      pick = k;
      break;
    }
  }
  // Zero-probability entries are never returned, even through rounding.
  while (std::exp(logp(pick)) == 0.0 && pick > 0) --pick;
  return {pick, logp(pick)};
}

Policy make_reference_policy(const ResponseSpace& space, double logit_scale, std::uint64_t seed) {
  Rng rng = make_rng(seed, {kReferencePolicyStream});
  Policy p;
  p.tag = PolicyTag::kSftReference;
  p.logits = gaussian_matrix(space.n_prompts, space.n_templates, rng) * logit_scale;
  return p;
}

Policy uniform_policy(const ResponseSpace& space) {
  Policy p;
  p.tag = PolicyTag::kSftReference;
  p.logits = Eigen::MatrixXd::Zero(space.n_prompts, space.n_templates);
  return p;
}

}  // namespace morlaif
