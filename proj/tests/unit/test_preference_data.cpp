#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "morlaif/errors.hpp"
#include "morlaif/preference_data.hpp"
#include "test_util.hpp"

using namespace morlaif;
using morlaif::testing::small_world_config;
using morlaif::testing::TempDir;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class StubTransport : public CompletionTransport {
 public:
  explicit StubTransport(std::vector<CompletionReply> replies) : replies_(std::move(replies)) {}
  CompletionReply complete(const CompletionRequest& request) override {
    requests.push_back(request);
    const size_t i = std::min(calls++, replies_.size() - 1);
    return replies_[i];
  }
  size_t calls = 0;
  std::vector<CompletionRequest> requests;

 private:
  std::vector<CompletionReply> replies_;
};

CompletionReply ok(std::string text) { return {true, false, std::move(text), ""}; }
CompletionReply transient() { return {false, true, "", "503"}; }

}  // namespace

TEST_CASE("pairs are deterministic, distinct and in range") {
  const WorldAndSpace ws = make_world(small_world_config(), 1);
  const Policy ref = make_reference_policy(ws.space, 0.5, 1);
  Rng r1(5), r2(5);
  const auto a = generate_pairs(ws.space, ref, 500, r1);
  const auto b = generate_pairs(ws.space, ref, 500, r2);
  REQUIRE(a.size() == 500);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].prompt == b[i].prompt);
    CHECK(a[i].a == b[i].a);
    CHECK(a[i].b == b[i].b);
    CHECK(a[i].a != a[i].b);
    CHECK(a[i].index == i);
    CHECK(a[i].prompt < ws.space.n_prompts);
  }
  CHECK(make_pair_id(7) == "pair-000007");
}

TEST_CASE("two templates always yield both orders of the same pair") {
  const WorldAndSpace ws = make_world(small_world_config(3, 6, 4, 2), 2);
  Rng rng(1);
  for (const auto& p : generate_pairs(ws.space, uniform_policy(ws.space), 200, rng))
    CHECK(((p.a == 0 && p.b == 1) || (p.a == 1 && p.b == 0)));
  WorldConfig one = small_world_config();
  one.n_templates = 2;
  const WorldAndSpace w2 = make_world(one, 2);
  Policy bad = uniform_policy(w2.space);
  bad.logits.conservativeResize(bad.logits.rows(), 3);
  CHECK_THROWS_AS(generate_pairs(w2.space, bad, 3, rng), ValidationError);
  CHECK_THROWS_AS(generate_pairs(w2.space, uniform_policy(w2.space), 0, rng), ValidationError);
}

TEST_CASE("principle labels follow the Bradley-Terry probability") {
  WorldAndSpace ws = make_world(small_world_config(), 3);
  // Gap of exactly 4 temperatures on principle 0.
  const double t = ws.world.annotator_temps(0);
  ws.space.features.row(ws.space.row(0, 0)) = ws.world.theta.row(0) * (2.0 * t);
  ws.space.features.row(ws.space.row(0, 1)) = ws.world.theta.row(0) * (-2.0 * t);
  const ResponsePair pair{0, 0, 0, 1};
  Rng rng(9);
  const int n = 40000;
  int a_wins = 0, swaps = 0;
  for (int i = 0; i < n; ++i) {
    const ComparisonRecord r = simulate_principle_label(ws.world, ws.space, pair, 0, rng);
    CHECK(r.target == Target::of(0));
    CHECK(r.label != Label::kTie);
    swaps += r.position_swapped;
    a_wins += canonical(r).label == Label::kA;
  }
  const double p = sigmoid(4.0);
  CHECK(std::abs(a_wins / double(n) - p) < 4.0 * std::sqrt(p * (1 - p) / n));
  CHECK(std::abs(swaps / double(n) - 0.5) < 0.01);
  CHECK_THROWS_AS(simulate_principle_label(ws.world, ws.space, pair, 3, rng), ValidationError);
}

TEST_CASE("constitution labels sample principles uniformly and are OVERALL") {
  const WorldAndSpace ws = make_world(small_world_config(), 4);
  const std::vector<int> set{0, 2};
  const ResponsePair pair{3, 1, 0, 2};
  Rng rng(2);
  std::map<int, int> counts;
  for (int i = 0; i < 20000; ++i) {
    int used = -1;
    const ComparisonRecord r = simulate_constitution_label(ws.world, ws.space, pair, set, rng, &used);
    CHECK(r.target.is_overall());
    ++counts[used];
  }
  CHECK(counts.size() == 2);
  CHECK(std::abs(counts[0] / 20000.0 - 0.5) < 0.015);
  CHECK_THROWS_AS(simulate_constitution_label(ws.world, ws.space, pair, std::vector<int>{}, rng),
                  ValidationError);
}

TEST_CASE("judge never ties without the tie protocol; identical responses tie with it") {
  WorldAndSpace ws = make_world(small_world_config(), 5);
  const ResponsePair pair{0, 2, 1, 3};
  Rng rng(3);
  for (int i = 0; i < 2000; ++i)
    CHECK(simulate_judge_label(ws.world, ws.space, pair, {}, rng).label != Label::kTie);

  ws.space.features.row(ws.space.row(2, 3)) = ws.space.features.row(ws.space.row(2, 1));
  const JudgeProtocol tie{true, 1e-9};
  for (int i = 0; i < 200; ++i) CHECK(simulate_judge_label(ws.world, ws.space, pair, tie, rng).label == Label::kTie);
  CHECK_THROWS_AS(simulate_judge_label(ws.world, ws.space, pair, {true, -1.0}, rng), ValidationError);
}

TEST_CASE("canonical undoes the display swap") {
  ComparisonRecord r;
  r.pair_id = "p";
  r.response_a = 4;
  r.response_b = 7;
  r.label = Label::kA;
  r.position_swapped = true;
  const ComparisonRecord c = canonical(r);
  CHECK(std::get<int>(c.response_a) == 7);
  CHECK(std::get<int>(c.response_b) == 4);
  CHECK(c.label == Label::kB);
  CHECK_FALSE(c.position_swapped);
  CHECK(canonical(c) == c);
  r.label = Label::kTie;
  CHECK(canonical(r).label == Label::kTie);
  r.label.reset();
  CHECK_FALSE(canonical(r).label.has_value());
}

TEST_CASE("records survive a JSONL round trip") {
  TempDir dir("records");
  std::vector<ComparisonRecord> rs(3);
  rs[0].pair_id = "pair-000001";
  rs[0].prompt_ref = 3;
  rs[0].response_a = 1;
  rs[0].response_b = 2;
  rs[0].target = Target::of(5);
  rs[0].label = Label::kB;
  rs[0].position_swapped = true;
  rs[1].pair_id = "s-000001-c00-t01";
  rs[1].prompt_ref = std::string("Human: hi\n\"quoted\"");
  rs[1].response_a = std::string("one");
  rs[1].response_b = std::string("two");
  rs[1].label = Label::kTie;
  rs[1].source = Source::kHuman;
  rs[1].quality_flags = {"gate_failed"};
  rs[1].created_at = "2026-01-02T03:04:05Z";
  rs[2].pair_id = "x";
  rs[2].source = Source::kExternal;
  rs[2].quality_flags = {"parse_failed"};
  const auto path = dir.path() / "d.jsonl";
  write_records(path, {rs[0], rs[1]});
  append_record(path, rs[2]);
  const auto back = read_records(path);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) CHECK(back[i] == rs[i]);
  CHECK(record_from_json(to_json(rs[1])) == rs[1]);

  nlohmann::json bad = to_json(rs[0]);
  bad["label"] = "C";
  CHECK_THROWS_AS(record_from_json(bad), ValidationError);
  for (auto s : {Label::kA, Label::kB, Label::kTie}) CHECK(parse_label(to_string(s)) == s);
  for (auto s : {Source::kSimulated, Source::kHuman, Source::kExternal}) CHECK(parse_source(to_string(s)) == s);
}

TEST_CASE("shipped templates match the asset files byte for byte") {
  const std::filesystem::path assets = MORLAIF_TEST_ASSET_DIR;
  for (TemplateId id : kAllTemplates) {
    CHECK(std::string(template_text(id)) == slurp(assets / "prompts" / template_file_name(id)));
    CHECK(parse_template_id(to_string(id)) == id);
  }
  CHECK(std::string(gate_riddle_text()) == slurp(assets / "gate" / "riddle.txt"));
}

TEST_CASE("rendering substitutes every slot once") {
  const std::string out =
      render_template(TemplateId::kFeedbackNoCot, "be {responseA}", "CONV", "RA {principle}", "RB");
  CHECK(out.find("{principle}") != std::string::npos);  // only from the substituted text
  CHECK(out.find("be {responseA}") != std::string::npos);
  CHECK(out.find("CONV") != std::string::npos);
  CHECK(out.find("RB") != std::string::npos);
  CHECK(out.find("{conversation}") == std::string::npos);
  CHECK(out.find("{responseB}") == std::string::npos);
}

TEST_CASE("choice parsing") {
  CHECK(parse_choice(" A\n", TemplateId::kFeedbackNoCot) == Label::kA);
  CHECK(parse_choice("B.", TemplateId::kFeedbackNoCot) == Label::kB);
  CHECK_FALSE(parse_choice("Both", TemplateId::kFeedbackNoCot).has_value());
  CHECK_FALSE(parse_choice("", TemplateId::kFeedbackNoCot).has_value());
  CHECK_FALSE(parse_choice("C", TemplateId::kFeedbackNoCot).has_value());
  CHECK(parse_choice("Chosen option: A then... Chosen option: B", TemplateId::kFeedbackCot) == Label::kB);
  CHECK_FALSE(parse_choice("I pick A", TemplateId::kFeedbackCot).has_value());
}

TEST_CASE("external client retries transient failures with doubling backoff") {
  ::setenv("MORLAIF_TEST_KEY", "secret", 1);
  FeedbackClientConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1/v1/completions";
  cfg.model = "m";
  cfg.credential_env = "MORLAIF_TEST_KEY";
  cfg.max_retries = 3;
  cfg.backoff_initial_ms = 10;
  std::vector<int> sleeps;
  auto stub = std::make_shared<StubTransport>(std::vector{transient(), transient(), ok("B")});
  ExternalFeedbackClient client(cfg, stub, [&](int ms) { sleeps.push_back(ms); });
  const TextPair pair{"pair-000003", "Human: q", "first", "second"};
  Rng rng(1);
  const ComparisonRecord r = client.label(pair, Target::of(2), "be kind", TemplateId::kFeedbackNoCot, rng);
  CHECK(stub->calls == 3);
  CHECK(sleeps == std::vector<int>{10, 20});
  CHECK(r.source == Source::kExternal);
  CHECK(r.label == Label::kB);
  CHECK(stub->requests[0].api_key == "secret");
  CHECK(stub->requests[0].idempotency_key == stub->requests[2].idempotency_key);
  const ComparisonRecord c = canonical(r);
  CHECK(std::get<std::string>(c.response_a) == "first");
  CHECK(std::get<std::string>(c.response_b) == "second");
  CHECK(stub->requests[0].prompt.find("be kind") != std::string::npos);

  auto garbage = std::make_shared<StubTransport>(std::vector{ok("no idea")});
  const ComparisonRecord g = ExternalFeedbackClient(cfg, garbage, [](int) {})
                                 .label(pair, Target::overall(), "x", TemplateId::kFeedbackNoCot, rng);
  CHECK_FALSE(g.label.has_value());
  CHECK(g.quality_flags.count("parse_failed") == 1);

  auto down = std::make_shared<StubTransport>(std::vector{transient()});
  CHECK_THROWS_AS(ExternalFeedbackClient(cfg, down, [](int) {})
                      .label(pair, Target::overall(), "x", TemplateId::kFeedbackNoCot, rng),
                  RuntimeFailure);
  CHECK(down->calls == 4);

  auto fatal = std::make_shared<StubTransport>(std::vector{CompletionReply{false, false, "", "401"}});
  CHECK_THROWS_AS(ExternalFeedbackClient(cfg, fatal, [](int) {})
                      .label(pair, Target::overall(), "x", TemplateId::kFeedbackNoCot, rng),
                  RuntimeFailure);
  CHECK(fatal->calls == 1);

  cfg.credential_env = "MORLAIF_TEST_KEY_UNSET";
  ::unsetenv("MORLAIF_TEST_KEY_UNSET");
  CHECK_THROWS_AS(ExternalFeedbackClient(cfg, stub, [](int) {})
                      .label(pair, Target::overall(), "x", TemplateId::kFeedbackNoCot, rng),
                  ValidationError);
}
