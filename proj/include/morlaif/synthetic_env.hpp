#ifndef MORLAIF_SYNTHETIC_ENV_HPP_
#define MORLAIF_SYNTHETIC_ENV_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string_view>

#include "morlaif/random.hpp"

namespace morlaif {

// Generation parameters for a synthetic world. Defaults give the full-sized
// setup: 12 principles, one of which (sycophancy) correlates weakly with the
// rest and carries a negative judge weight.
struct WorldConfig {
  int n_principles = 12;
  int feature_dim = 16;
  int n_prompts = 64;
  int n_templates = 16;

  // Target principle correlation: every off-diagonal entry equals
  // base_correlation unless an explicit matrix is given.
  double base_correlation = 0.7;
  std::optional<Eigen::MatrixXd> correlation;

  bool sycophancy_mode = true;
  int sycophancy_index = 4;
  double sycophancy_correlation = 0.4;
  double sycophancy_weight = -1.0;  // before utility normalization

  double judge_weight_min = 0.5;
  double judge_weight_max = 1.5;
  std::optional<Eigen::VectorXd> judge_weights;

  double annotator_temp_min = 0.3;
  double annotator_temp_max = 0.9;
  std::optional<Eigen::VectorXd> annotator_temps;
  double judge_temp = 0.7;

  double reference_logit_scale = 0.5;
  double gamma = 1.0;  // single-step episodes; recorded, never applied
};

// Latent ground truth. Row i of theta defines principle score
// g_i(x) = theta_i . phi(x); rows have unit norm.
struct World {
  int n_principles = 0;
  int feature_dim = 0;
  Eigen::MatrixXd theta;
  Eigen::MatrixXd target_correlation;
  Eigen::VectorXd judge_weights;
  Eigen::VectorXd annotator_temps;
  double judge_temp = 1.0;
  std::optional<int> sycophancy_index;
  double gamma = 1.0;
  std::uint64_t seed = 0;
};

// P prompts with K candidate templates each. Template k of prompt p has
// feature row p * K + k.
struct ResponseSpace {
  int n_prompts = 0;
  int n_templates = 0;
  Eigen::MatrixXd prompt_features;
  Eigen::MatrixXd features;

  Eigen::Index row(int prompt, int response) const {
    return static_cast<Eigen::Index>(prompt) * n_templates + response;
  }
  auto phi(int prompt, int response) const { return features.row(row(prompt, response)); }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  void check_index(int prompt, int response) const;
};

enum class PolicyTag { kSftReference, kTrained, kOracle };
std::string_view to_string(PolicyTag tag);
std::optional<PolicyTag> parse_policy_tag(std::string_view name);

// Tabular softmax policy over templates, one row of logits per prompt.
struct Policy {
  Eigen::MatrixXd logits;
  PolicyTag tag = PolicyTag::kSftReference;

  int n_prompts() const { return static_cast<int>(logits.rows()); }
  int n_templates() const { return static_cast<int>(logits.cols()); }
  Eigen::VectorXd probabilities(int prompt) const;
  Eigen::VectorXd log_probabilities(int prompt) const;
  // Lowest index among maximal logits.
  int argmax(int prompt) const;
};

struct SampledResponse {
  int response = 0;
  double log_prob = 0.0;
};

struct WorldAndSpace {
  World world;
  ResponseSpace space;
};

// Throws ValidationError for bad dimensions, non-positive temperatures, a
// non-PSD correlation target or one whose rank exceeds the feature dimension.
WorldAndSpace make_world(const WorldConfig& config, std::uint64_t seed);

// Correlation target implied by the config (before any sampling).
Eigen::MatrixXd target_correlation(const WorldConfig& config);

double principle_score(const World& world, const ResponseSpace& space, int prompt, int response,
                       int principle);
Eigen::VectorXd principle_scores(const World& world, const ResponseSpace& space, int prompt,
                                 int response);
double true_utility(const World& world, const ResponseSpace& space, int prompt, int response);

SampledResponse sample_response(const Policy& policy, int prompt, Rng& rng);

Policy make_reference_policy(const ResponseSpace& space, double logit_scale, std::uint64_t seed);
Policy uniform_policy(const ResponseSpace& space);

// Numerically stable log-softmax of one logit row.
Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& logits);

}  // namespace morlaif

#endif  // MORLAIF_SYNTHETIC_ENV_HPP_
