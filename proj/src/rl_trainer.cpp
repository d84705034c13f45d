#include "morlaif/rl_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "morlaif/errors.hpp"
#include "morlaif/json_util.hpp"

namespace morlaif {

void PPOConfig::validate() const {
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ValidationError("ppo: clip_epsilon must lie in (0, 1)");
  if (!(learning_rate > 0.0)) throw ValidationError("ppo: learning_rate must be positive");
  if (!(kl_coef >= 0.0)) throw ValidationError("ppo: kl_coef must be non-negative");
  if (adaptive_kl && !(adaptive_kl->target > 0.0 && adaptive_kl->horizon > 0.0))
    throw ValidationError("ppo: adaptive KL target and horizon must be positive");
  if (epochs_per_batch < 1) throw ValidationError("ppo: epochs_per_batch must be >= 1");
  if (batch_size < 1) throw ValidationError("ppo: batch_size must be >= 1");
  if (n_iterations < 0) throw ValidationError("ppo: n_iterations must be >= 0");
  if (baseline_window < 1) throw ValidationError("ppo: baseline_window must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_epsilon > 0.0))
    throw ValidationError("ppo: Adam parameters out of range");
}

ScalarizedReward ScalarizedReward::from_models(std::span<const PreferenceModel> pms, const CheckedSpec& spec,
                                               const ResponseSpace& space) {
  return from_table(score_table(pms, space, true), spec);
}

ScalarizedReward ScalarizedReward::from_table(const Eigen::Ref<const Eigen::MatrixXd>& table,
                                              const CheckedSpec& spec) {
  ScalarizedReward r;
  r.standardized = table;
  r.reward = scalarize_rows(spec, table);
  return r;
}

RolloutBatch collect_rollouts(const Policy& policy, const Policy& reference, const ResponseSpace& space,
                              const ScalarizedReward& reward, double kl_coef, int n, std::uint64_t seed) {
  if (reference.n_prompts() != policy.n_prompts() || reference.n_templates() != policy.n_templates())
    throw ValidationError("collect_rollouts: policy and reference shapes differ");
  if (reward.reward.size() != space.features.rows())
    throw ValidationError("collect_rollouts: reward does not cover the response space");
  RolloutBatch batch;
  batch.kl_coef = kl_coef;
  batch.samples.resize(static_cast<size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    RolloutSample& s = batch.samples[static_cast<size_t>(i)];
    s.prompt = uniform_index(rng, space.n_prompts);
    const SampledResponse draw = sample_response(policy, s.prompt, rng);
    s.response = draw.response;
    s.old_log_prob = draw.log_prob;
    s.ref_log_prob = reference.log_probabilities(s.prompt)(s.response);
    const Eigen::Index row = space.row(s.prompt, s.response);
    s.scores = reward.standardized.row(row).transpose();
    s.reward = reward.reward(row);
    s.shaped_reward = s.reward - kl_coef * (s.old_log_prob - s.ref_log_prob);
  }
  return batch;
}

PromptBaseline::PromptBaseline(int n_prompts, int window)
    : mean_(Eigen::VectorXd::Zero(n_prompts)), count_(Eigen::VectorXi::Zero(n_prompts)), window_(window) {}

void PromptBaseline::assign_advantages(RolloutBatch& batch) {
  for (auto& s : batch.samples) s.advantage = count_(s.prompt) > 0 ? s.shaped_reward - mean_(s.prompt) : 0.0;
  for (const auto& s : batch.samples) {
    count_(s.prompt) += 1;
    mean_(s.prompt) += (s.shaped_reward - mean_(s.prompt)) / std::min(count_(s.prompt), window_);
  }
}

void normalize_advantages(RolloutBatch& batch) {
  if (batch.samples.empty()) return;
  const double n = static_cast<double>(batch.samples.size());
  double mean = 0.0;
  for (const auto& s : batch.samples) mean += s.advantage;
  mean /= n;
  double var = 0.0;
  for (const auto& s : batch.samples) var += (s.advantage - mean) * (s.advantage - mean);
  const double sd = std::sqrt(var / n);
  for (auto& s : batch.samples) s.advantage = sd > 1e-12 ? (s.advantage - mean) / sd : s.advantage - mean;
}

SurrogateResult clipped_surrogate(const Policy& policy, const RolloutBatch& batch, double clip_epsilon) {
  SurrogateResult out;
  out.gradient = Eigen::MatrixXd::Zero(policy.logits.rows(), policy.logits.cols());
  if (batch.samples.empty()) throw ValidationError("ppo: empty batch");
  const double n = static_cast<double>(batch.samples.size());
  int clipped = 0;
  for (const auto& s : batch.samples) {
    const Eigen::VectorXd logp = policy.log_probabilities(s.prompt);
    const double ratio = std::exp(logp(s.response) - s.old_log_prob);
    const double bounded = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    const double unclipped_term = ratio * s.advantage;
    const double clipped_term = bounded * s.advantage;
    if (bounded != ratio) ++clipped;
    if (unclipped_term <= clipped_term) {
      out.value += unclipped_term / n;
      // d ratio / d logits_p = ratio * (e_a - pi_p)
      Eigen::RowVectorXd g = -logp.array().exp().matrix().transpose();
      g(s.response) += 1.0;
      out.gradient.row(s.prompt) += (s.advantage * ratio / n) * g;
    } else {
      out.value += clipped_term / n;
    }
  }
  out.clip_fraction = clipped / n;
  return out;
}

UpdateStats ppo_update(Policy& policy, const RolloutBatch& batch, const PPOConfig& config) {
  AdamState fresh;
  return ppo_update(policy, batch, config, fresh);
}

UpdateStats ppo_update(Policy& policy, const RolloutBatch& batch, const PPOConfig& config, AdamState& adam) {
  if (batch.samples.empty()) throw ValidationError("ppo_update: empty batch");
  if (adam.m.rows() != policy.logits.rows() || adam.m.cols() != policy.logits.cols()) {
    adam.m = Eigen::MatrixXd::Zero(policy.logits.rows(), policy.logits.cols());
    adam.v = adam.m;
    adam.steps = 0;
  }
  UpdateStats stats;
  for (int epoch = 0; epoch < config.epochs_per_batch; ++epoch) {
    const SurrogateResult sur = clipped_surrogate(policy, batch, config.clip_epsilon);
    if (!sur.gradient.allFinite()) {
      std::ostringstream msg;
      msg << "ppo_update: non-finite gradient at epoch " << epoch << " (surrogate " << sur.value
          << ", max |logit| " << policy.logits.cwiseAbs().maxCoeff() << ")";
      throw RuntimeFailure(msg.str());
    }
    if (epoch == 0) stats.surrogate = sur.value;
    stats.clip_fraction = sur.clip_fraction;
    ++adam.steps;
    adam.m = config.adam_beta1 * adam.m + (1.0 - config.adam_beta1) * sur.gradient;
    adam.v = config.adam_beta2 * adam.v + (1.0 - config.adam_beta2) * sur.gradient.cwiseAbs2();
    const double c1 = 1.0 - std::pow(config.adam_beta1, adam.steps);
    const double c2 = 1.0 - std::pow(config.adam_beta2, adam.steps);
    policy.logits.array() +=
        config.learning_rate * (adam.m.array() / c1) / ((adam.v.array() / c2).sqrt() + config.adam_epsilon);
  }
  double kl = 0.0;
  for (const auto& s : batch.samples) kl += s.old_log_prob - policy.log_probabilities(s.prompt)(s.response);
  stats.approx_kl = kl / static_cast<double>(batch.samples.size());
  return stats;
}

double kl_divergence(const Policy& p, const Policy& q, int prompt) {
  const Eigen::VectorXd lp = p.log_probabilities(prompt);
  const Eigen::VectorXd lq = q.log_probabilities(prompt);
  double kl = 0.0;
  for (Eigen::Index k = 0; k < lp.size(); ++k) {
    const double pk = std::exp(lp(k));
    if (pk > 0.0) kl += pk * (lp(k) - lq(k));
  }
  return std::max(kl, 0.0);
}

double mean_kl(const Policy& p, const Policy& q) {
  double s = 0.0;
  for (int i = 0; i < p.n_prompts(); ++i) s += kl_divergence(p, q, i);
  return s / p.n_prompts();
}

double total_variation(const Policy& p, const Policy& q, int prompt) {
  return 0.5 * (p.probabilities(prompt) - q.probabilities(prompt)).cwiseAbs().sum();
}

double entropy(const Policy& p, int prompt) {
  const Eigen::VectorXd lp = p.log_probabilities(prompt);
  double h = 0.0;
  for (Eigen::Index k = 0; k < lp.size(); ++k) {
    const double pk = std::exp(lp(k));
    if (pk > 0.0) h -= pk * lp(k);
  }
  return h;
}

double mean_entropy(const Policy& p) {
  double s = 0.0;
  for (int i = 0; i < p.n_prompts(); ++i) s += entropy(p, i);
  return s / p.n_prompts();
}

double expected_reward(const Policy& p, const Eigen::Ref<const Eigen::VectorXd>& reward,
                       const ResponseSpace& space) {
  double s = 0.0;
  for (int i = 0; i < p.n_prompts(); ++i)
    s += p.probabilities(i).dot(reward.segment(space.row(i, 0), space.n_templates));
  return s / p.n_prompts();
}

TrainResult train(const ResponseSpace& space, const ScalarizedReward& reward, const PPOConfig& config,
                  const Policy& reference) {
  config.validate();
  if (reference.n_prompts() != space.n_prompts || reference.n_templates() != space.n_templates)
    throw ValidationError("train: reference policy does not match the response space");
  TrainResult out;
  out.policy = reference;
  out.policy.tag = PolicyTag::kTrained;
  PromptBaseline baseline(space.n_prompts, config.baseline_window);
  AdamState adam;
  double beta = config.kl_coef;
  for (int it = 0; it < config.n_iterations; ++it) {
    RolloutBatch batch = collect_rollouts(out.policy, reference, space, reward, beta, config.batch_size,
                                          derive_seed(config.seed, {kPpoStream, static_cast<std::uint64_t>(it)}));
    baseline.assign_advantages(batch);
    normalize_advantages(batch);
    ppo_update(out.policy, batch, config, adam);

    CurvePoint pt;
    pt.iteration = it;
    for (const auto& s : batch.samples) pt.mean_reward += s.reward;
    pt.mean_reward /= static_cast<double>(batch.samples.size());
    pt.kl = mean_kl(out.policy, reference);
    pt.entropy = mean_entropy(out.policy);
    pt.expected_reward = expected_reward(out.policy, reward.reward, space);
    pt.kl_coef = beta;
    out.curve.push_back(pt);

    if (config.adaptive_kl) {
      const double err = std::clamp(pt.kl / config.adaptive_kl->target - 1.0, -0.2, 0.2);
      beta *= 1.0 + err * config.batch_size / config.adaptive_kl->horizon;
    }
  }
  return out;
}

Policy exact_best_response(const ResponseSpace& space, const std::function<double(int, int)>& reward_fn) {
  Eigen::VectorXd r(space.features.rows());
  for (int p = 0; p < space.n_prompts; ++p)
    for (int k = 0; k < space.n_templates; ++k) r(space.row(p, k)) = reward_fn(p, k);
  return exact_best_response_table(space, r);
}

Policy exact_best_response_table(const ResponseSpace& space, const Eigen::Ref<const Eigen::VectorXd>& reward) {
  if (reward.size() != space.features.rows())
    throw ValidationError("exact_best_response: reward does not cover the response space");
  Policy p;
  p.tag = PolicyTag::kOracle;
  p.logits = Eigen::MatrixXd::Constant(space.n_prompts, space.n_templates, -1e6);
  for (int i = 0; i < space.n_prompts; ++i) {
    int best = 0;
    for (int k = 1; k < space.n_templates; ++k)
      if (reward(space.row(i, k)) > reward(space.row(i, best))) best = k;
    p.logits(i, best) = 0.0;
  }
  return p;
}

nlohmann::ordered_json to_json(const PPOConfig& c) {
  nlohmann::ordered_json j;
  j["clip_epsilon"] = c.clip_epsilon;
  j["learning_rate"] = c.learning_rate;
  j["kl_coef"] = c.kl_coef;
  if (c.adaptive_kl)
    j["adaptive_kl"] = {{"target", c.adaptive_kl->target}, {"horizon", c.adaptive_kl->horizon}};
  else
    j["adaptive_kl"] = nullptr;
  j["epochs_per_batch"] = c.epochs_per_batch;
  j["batch_size"] = c.batch_size;
  j["n_iterations"] = c.n_iterations;
  j["gamma"] = c.gamma;
  j["baseline_window"] = c.baseline_window;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_epsilon"] = c.adam_epsilon;
  j["seed"] = c.seed;
  return j;
}

PPOConfig ppo_config_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"clip_epsilon", "learning_rate", "kl_coef", "adaptive_kl", "epochs_per_batch", "batch_size",
              "n_iterations", "gamma", "baseline_window", "adam_beta1", "adam_beta2", "adam_epsilon", "seed"},
             "ppo");
  try {
    PPOConfig c;
    c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.kl_coef = j.value("kl_coef", c.kl_coef);
    if (j.contains("adaptive_kl") && !j["adaptive_kl"].is_null()) {
      check_keys(j["adaptive_kl"], {"target", "horizon"}, "ppo.adaptive_kl");
      AdaptiveKl a;
      a.target = j["adaptive_kl"].value("target", a.target);
      a.horizon = j["adaptive_kl"].value("horizon", a.horizon);
      c.adaptive_kl = a;
    }
    c.epochs_per_batch = j.value("epochs_per_batch", c.epochs_per_batch);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.n_iterations = j.value("n_iterations", c.n_iterations);
    c.gamma = j.value("gamma", c.gamma);
    c.baseline_window = j.value("baseline_window", c.baseline_window);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("ppo: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const Policy& p) {
  nlohmann::ordered_json j;
  j["tag"] = to_string(p.tag);
  j["logits"] = matrix_to_json(p.logits);
  return j;
}

Policy policy_from_json(const nlohmann::json& j) {
  try {
    Policy p;
    const auto tag = parse_policy_tag(j.at("tag").get<std::string>());
    if (!tag) throw ValidationError("policy: unknown tag");
    p.tag = *tag;
    p.logits = matrix_from_json(j.at("logits"));
    if (p.logits.rows() < 1 || p.logits.cols() < 1) throw ValidationError("policy: empty logits");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("policy: ") + e.what());
  }
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string s = "iteration,mean_reward,kl,entropy,expected_reward,kl_coef\n";
  for (const auto& p : curve)
    s += std::to_string(p.iteration) + "," + format_double(p.mean_reward) + "," + format_double(p.kl) + "," +
         format_double(p.entropy) + "," + format_double(p.expected_reward) + "," + format_double(p.kl_coef) +
         "\n";
  return s;
}

}  // namespace morlaif
