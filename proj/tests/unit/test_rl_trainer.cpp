#include <doctest.h>

#include <cmath>
#include <vector>

#include "morlaif/errors.hpp"
#include "morlaif/rl_trainer.hpp"
#include "test_util.hpp"

using namespace morlaif;
using morlaif::testing::small_world_config;

namespace {

RolloutBatch random_batch(const Policy& pi, int n, std::uint64_t seed) {
  Rng rng(seed);
  RolloutBatch b;
  for (int i = 0; i < n; ++i) {
    RolloutSample s;
    s.prompt = uniform_index(rng, static_cast<int>(pi.n_prompts()));
    const SampledResponse r = sample_response(pi, s.prompt, rng);
    s.response = r.response;
    // Old policy slightly off so that some ratios fall outside the clip range.
    s.old_log_prob = r.log_prob + 0.3 * standard_normal(rng);
    s.advantage = standard_normal(rng);
    b.samples.push_back(s);
  }
  return b;
}

Policy random_policy(int p, int k, std::uint64_t seed) {
  Rng rng(seed);
  Policy pi;
  pi.logits.resize(p, k);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < k; ++j) pi.logits(i, j) = standard_normal(rng);
  return pi;
}

ScalarizedReward linear_reward(const WorldAndSpace& ws) {
  ScalarizationSpec spec;
  spec.weights = Eigen::VectorXd::Ones(ws.world.n_principles);
  return ScalarizedReward::from_table(latent_score_table(ws.world, ws.space),
                                      validate_spec(spec, ws.world.n_principles));
}

}  // namespace

TEST_CASE("surrogate gradient matches central differences") {
  const Policy pi = random_policy(3, 5, 1);
  const RolloutBatch batch = random_batch(pi, 200, 2);
  const SurrogateResult s = clipped_surrogate(pi, batch, 0.2);
  CHECK(s.clip_fraction > 0.0);
  const double h = 1e-6;
  double worst = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      Policy plus = pi, minus = pi;
      plus.logits(i, j) += h;
      minus.logits(i, j) -= h;
      const double fd = (clipped_surrogate(plus, batch, 0.2).value - clipped_surrogate(minus, batch, 0.2).value) / (2 * h);
      worst = std::max(worst, std::abs(fd - s.gradient(i, j)));
    }
  CHECK(worst <= 1e-5);
}

TEST_CASE("zero advantages leave the policy unchanged") {
  Policy pi = random_policy(2, 4, 3);
  const Policy before = pi;
  RolloutBatch b = random_batch(pi, 50, 4);
  for (auto& s : b.samples) {
    s.advantage = 0.0;
    s.old_log_prob = log_softmax(pi.logits.row(s.prompt).transpose())(s.response);
  }
  ppo_update(pi, b, PPOConfig{});
  CHECK(pi.logits == before.logits);
}

TEST_CASE("positive advantage on one of two templates raises its probability") {
  Policy pi;
  pi.logits = Eigen::MatrixXd::Zero(1, 2);
  RolloutBatch b;
  for (int i = 0; i < 10; ++i) {
    RolloutSample s;
    s.prompt = 0;
    s.response = i % 2;
    s.old_log_prob = std::log(0.5);
    s.advantage = s.response == 0 ? 1.0 : -1.0;
    b.samples.push_back(s);
  }
  ppo_update(pi, b, PPOConfig{});
  CHECK(pi.probabilities(0)(0) > 0.5);
}

TEST_CASE("shaped reward equals reward without the KL penalty") {
  const WorldAndSpace ws = make_world(small_world_config(), 5);
  const Policy ref = make_reference_policy(ws.space, 0.5, 5);
  const Policy pi = random_policy(ws.space.n_prompts, ws.space.n_templates, 6);
  const ScalarizedReward r = linear_reward(ws);
  const RolloutBatch b0 = collect_rollouts(pi, ref, ws.space, r, 0.0, 300, 7);
  for (const auto& s : b0.samples) {
    CHECK(s.shaped_reward == s.reward);
    CHECK(s.reward == r.reward(ws.space.row(s.prompt, s.response)));
  }
  const RolloutBatch b1 = collect_rollouts(pi, ref, ws.space, r, 0.5, 300, 7);
  for (size_t i = 0; i < b1.samples.size(); ++i) {
    const auto& s = b1.samples[i];
    CHECK(s.response == b0.samples[i].response);
    CHECK(s.shaped_reward == doctest::Approx(s.reward - 0.5 * (s.old_log_prob - s.ref_log_prob)));
  }
}

TEST_CASE("divergences") {
  const Policy p = random_policy(4, 6, 8);
  CHECK(mean_kl(p, p) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(total_variation(p, p, 2) == 0.0);
  const Policy q = random_policy(4, 6, 9);
  CHECK(mean_kl(p, q) > 0.0);
  // Oracle: direct sums.
  const Eigen::VectorXd a = p.probabilities(1), b = q.probabilities(1);
  double kl = 0.0, tv = 0.0;
  for (int k = 0; k < 6; ++k) {
    kl += a(k) * std::log(a(k) / b(k));
    tv += 0.5 * std::abs(a(k) - b(k));
  }
  CHECK(kl_divergence(p, q, 1) == doctest::Approx(kl).epsilon(1e-12));
  CHECK(total_variation(p, q, 1) == doctest::Approx(tv).epsilon(1e-12));
  Policy u;
  u.logits = Eigen::MatrixXd::Zero(2, 8);
  CHECK(mean_entropy(u) == doctest::Approx(std::log(8.0)));
}

TEST_CASE("training is deterministic and improves the reward") {
  const WorldAndSpace ws = make_world(small_world_config(3, 6, 8, 5), 10);
  const Policy ref = make_reference_policy(ws.space, 0.5, 10);
  const ScalarizedReward r = linear_reward(ws);
  PPOConfig c;
  c.batch_size = 256;
  c.n_iterations = 40;
  c.seed = 3;
  const TrainResult a = train(ws.space, r, c, ref);
  const TrainResult b = train(ws.space, r, c, ref);
  CHECK(a.policy.logits == b.policy.logits);
  REQUIRE(a.curve.size() == 40);
  CHECK(a.policy.tag == PolicyTag::kTrained);
  CHECK(expected_reward(a.policy, r.reward, ws.space) > expected_reward(ref, r.reward, ws.space));
  c.seed = 4;
  CHECK(train(ws.space, r, c, ref).policy.logits != a.policy.logits);
}

TEST_CASE("a large KL coefficient keeps the policy near the reference") {
  const WorldAndSpace ws = make_world(small_world_config(3, 6, 8, 5), 11);
  const Policy ref = make_reference_policy(ws.space, 0.5, 11);
  const ScalarizedReward r = linear_reward(ws);
  PPOConfig c;
  c.batch_size = 256;
  c.n_iterations = 30;
  c.kl_coef = 50.0;
  const TrainResult tight = train(ws.space, r, c, ref);
  c.kl_coef = 0.0;
  const TrainResult loose = train(ws.space, r, c, ref);
  double tv_tight = 0.0, tv_loose = 0.0;
  for (int p = 0; p < ws.space.n_prompts; ++p) {
    tv_tight = std::max(tv_tight, total_variation(tight.policy, ref, p));
    tv_loose = std::max(tv_loose, total_variation(loose.policy, ref, p));
  }
  CHECK(tv_tight < 0.15);
  CHECK(tv_tight < tv_loose);
}

TEST_CASE("advantage normalization and baseline") {
  RolloutBatch b;
  for (double a : {1.0, 2.0, 3.0, 6.0}) {
    RolloutSample s;
    s.advantage = a;
    b.samples.push_back(s);
  }
  normalize_advantages(b);
  double m = 0.0, v = 0.0;
  for (const auto& s : b.samples) m += s.advantage;
  for (const auto& s : b.samples) v += s.advantage * s.advantage;
  CHECK(std::abs(m) < 1e-12);
  CHECK(v / 4.0 == doctest::Approx(1.0));

  PromptBaseline base(2, 16);
  RolloutBatch c;
  RolloutSample s;
  s.prompt = 1;
  s.shaped_reward = 2.0;
  c.samples = {s, s};
  base.assign_advantages(c);
  CHECK(c.samples[0].advantage == 0.0);  // no history yet
  for (auto& x : c.samples) x.shaped_reward = 5.0;
  base.assign_advantages(c);
  CHECK(c.samples[0].advantage == doctest::Approx(3.0));
  s.prompt = 0;
  c.samples = {s};
  base.assign_advantages(c);
  CHECK(c.samples[0].advantage == 0.0);
}

TEST_CASE("exact best response picks the argmax with lowest-index ties") {
  ResponseSpace space;
  space.n_prompts = 2;
  space.n_templates = 3;
  space.features = Eigen::MatrixXd::Zero(6, 1);
  Eigen::VectorXd r(6);
  r << 0.0, 2.0, 2.0, 5.0, -1.0, 4.0;
  const Policy p = exact_best_response_table(space, r);
  CHECK(p.argmax(0) == 1);
  CHECK(p.argmax(1) == 0);
  CHECK(p.probabilities(0)(1) == doctest::Approx(1.0));
  CHECK(expected_reward(p, r, space) == doctest::Approx(3.5));
  CHECK_THROWS_AS(exact_best_response_table(space, Eigen::VectorXd::Zero(5)), ValidationError);
}

TEST_CASE("config validation and serialization") {
  PPOConfig c;
  c.adaptive_kl = AdaptiveKl{3.0, 500.0};
  c.seed = 99;
  const PPOConfig back = ppo_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  CHECK(back.adaptive_kl->target == 3.0);
  CHECK(back.seed == 99);
  CHECK(back.batch_size == c.batch_size);
  PPOConfig bad;
  bad.clip_epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = PPOConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  const Policy p = random_policy(2, 3, 1);
  CHECK(policy_from_json(nlohmann::json::parse(to_json(p).dump())).logits == p.logits);
}
