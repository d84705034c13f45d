#ifndef MORLAIF_RL_TRAINER_HPP_
#define MORLAIF_RL_TRAINER_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "morlaif/preference_model.hpp"
#include "morlaif/random.hpp"
#include "morlaif/scalarization.hpp"
#include "morlaif/synthetic_env.hpp"

namespace morlaif {

// Proportional controller toward a target KL; beta is multiplied by
// 1 + clip(KL / target - 1, -0.2, 0.2) * batch_size / horizon.
struct AdaptiveKl {
  double target = 6.0;
  double horizon = 10000.0;
};

struct PPOConfig {
  double clip_epsilon = 0.2;
  double learning_rate = 0.02;  // Adam step size
  double kl_coef = 0.1;
  std::optional<AdaptiveKl> adaptive_kl;
  int epochs_per_batch = 4;
  int batch_size = 1024;
  int n_iterations = 200;
  double gamma = 1.0;  // single-step episodes; recorded only
  // Weight of the newest sample in the per-prompt running-mean baseline is
  // 1 / min(count, baseline_window).
  int baseline_window = 16;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

// Per-response scalarized reward over the whole response space, computed
// once from frozen calibrated models.
struct ScalarizedReward {
  Eigen::MatrixXd standardized;  // rows: responses, cols: principles
  Eigen::VectorXd reward;        // scalarize(spec, row)

  static ScalarizedReward from_models(std::span<const PreferenceModel> pms, const CheckedSpec& spec,
                                      const ResponseSpace& space);
  // Arbitrary per-response score table, e.g. latent principle scores.
  static ScalarizedReward from_table(const Eigen::Ref<const Eigen::MatrixXd>& table, const CheckedSpec& spec);
};

struct RolloutSample {
  int prompt = 0;
  int response = 0;
  double old_log_prob = 0.0;
  double ref_log_prob = 0.0;
  Eigen::VectorXd scores;  // standardized per-principle scores
  double reward = 0.0;     // scalarized
  double shaped_reward = 0.0;
  double advantage = 0.0;
};

struct RolloutBatch {
  std::vector<RolloutSample> samples;
  double kl_coef = 0.0;
};

// Samples n (prompt, response) pairs from `policy`, prompts uniform, each
// with its own derived random stream. Advantages are left at zero.
RolloutBatch collect_rollouts(const Policy& policy, const Policy& reference, const ResponseSpace& space,
                              const ScalarizedReward& reward, double kl_coef, int n, std::uint64_t seed);

// Per-prompt running-mean baseline; returns shaped - baseline before the
// update, then absorbs the batch.
class PromptBaseline {
 public:
  PromptBaseline(int n_prompts, int window);
  void assign_advantages(RolloutBatch& batch);

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXi count_;
  int window_;
};

// Rescales advantages to zero mean and unit std (zero mean only when the
// std vanishes).
void normalize_advantages(RolloutBatch& batch);

struct SurrogateResult {
  double value = 0.0;
  Eigen::MatrixXd gradient;  // d value / d logits
  double clip_fraction = 0.0;
};

// Mean clipped surrogate min(r A, clip(r, 1-eps, 1+eps) A) over the batch,
// r = pi(a|s) / pi_old(a|s), with its gradient w.r.t. the logits.
SurrogateResult clipped_surrogate(const Policy& policy, const RolloutBatch& batch, double clip_epsilon);

// Adam moments over the logit table; persists across updates within a run.
struct AdamState {
  Eigen::MatrixXd m;
  Eigen::MatrixXd v;
  int steps = 0;
};

struct UpdateStats {
  double surrogate = 0.0;
  double approx_kl = 0.0;  // mean old_log_prob - new_log_prob over the batch
  double clip_fraction = 0.0;
};

// epochs_per_batch full-batch Adam ascent steps on the surrogate. Throws
// RuntimeFailure on a non-finite gradient. The overload without a state
// starts from fresh moments.
UpdateStats ppo_update(Policy& policy, const RolloutBatch& batch, const PPOConfig& config, AdamState& adam);
UpdateStats ppo_update(Policy& policy, const RolloutBatch& batch, const PPOConfig& config);

double kl_divergence(const Policy& p, const Policy& q, int prompt);
double mean_kl(const Policy& p, const Policy& q);
double total_variation(const Policy& p, const Policy& q, int prompt);
double entropy(const Policy& p, int prompt);
double mean_entropy(const Policy& p);
// Mean over prompts of E_{a ~ pi}[reward].
double expected_reward(const Policy& p, const Eigen::Ref<const Eigen::VectorXd>& reward, const ResponseSpace& space);

struct CurvePoint {
  int iteration = 0;
  double mean_reward = 0.0;      // batch mean scalarized reward
  double kl = 0.0;               // exact mean KL(pi || pi_ref) after the update
  double entropy = 0.0;          // exact mean entropy after the update
  double expected_reward = 0.0;  // exact, after the update
  double kl_coef = 0.0;
};

struct TrainResult {
  Policy policy;
  std::vector<CurvePoint> curve;
};

// Starts from a copy of the reference policy.
TrainResult train(const ResponseSpace& space, const ScalarizedReward& reward, const PPOConfig& config,
                  const Policy& reference);

// Deterministic argmax policy; ties go to the lowest template index.
Policy exact_best_response(const ResponseSpace& space, const std::function<double(int, int)>& reward_fn);
Policy exact_best_response_table(const ResponseSpace& space, const Eigen::Ref<const Eigen::VectorXd>& reward);

nlohmann::ordered_json to_json(const PPOConfig& c);
PPOConfig ppo_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const Policy& p);
Policy policy_from_json(const nlohmann::json& j);
std::string curve_csv(const std::vector<CurvePoint>& curve);

}  // namespace morlaif

#endif  // MORLAIF_RL_TRAINER_HPP_
