#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "morlaif/errors.hpp"
#include "morlaif/experiment.hpp"
#include "morlaif/json_util.hpp"
#include "test_util.hpp"

using namespace morlaif;
using morlaif::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Relative path -> contents for every regular file below `root`.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(MORLAIF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("presets round-trip through JSON") {
  for (const char* name : {"minimal", "default"}) {
    const ExperimentConfig c = ExperimentConfig::preset(name);
    const ExperimentConfig back = ExperimentConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
    CHECK(back.to_json().dump() == c.to_json().dump());
    CHECK(c.validate().size() <= 2);
  }
  const ExperimentConfig d = ExperimentConfig::preset("default");
  CHECK(d.principles.size() == 13);
  CHECK(d.principles_used.size() == 12);
  CHECK(d.world.n_prompts == 64);
  CHECK(d.world.n_templates == 16);
  CHECK(d.world.feature_dim == 16);
  CHECK(d.weak_dim() == 8);
  CHECK_THROWS_AS(ExperimentConfig::preset("huge"), ValidationError);
}

TEST_CASE("config parsing rejects unknown keys and bad values") {
  nlohmann::json j = {{"preset", "minimal"}, {"seed", 3}};
  CHECK(ExperimentConfig::from_json(j).seed == 3);
  j["colour"] = "blue";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"preset", "minimal"}}), ValidationError);
  nlohmann::json bad_world = {{"preset", "minimal"}, {"seed", 1}, {"world", {{"n_templates", 1}}}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad_world).validate(), ValidationError);
  nlohmann::json nested = {{"preset", "minimal"}, {"seed", 1}, {"ppo", {{"learning_rte", 0.1}}}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(nested), ValidationError);
}

TEST_CASE("data splits are contiguous and cover the feedback set") {
  const DataConfig d = ExperimentConfig::preset("default").data;
  const SplitSizes s = split_sizes(d);
  std::vector<ComparisonRecord> v(static_cast<size_t>(s.fit + s.calibration + s.test));
  for (size_t i = 0; i < v.size(); ++i) v[i].pair_id = make_pair_id(i);
  const auto fit = fit_split(v, d), cal = calibration_split(v, d), test = test_split(v, d);
  CHECK(fit.size() == s.fit);
  CHECK(cal.front().pair_id == make_pair_id(s.fit));
  CHECK(test.back().pair_id == v.back().pair_id);
}

TEST_CASE("minimal run is byte-identical on rerun and resumable by stage") {
  TempDir a("run_a"), b("run_b");
  const ExperimentConfig c = ExperimentConfig::preset("minimal");
  run_pipeline(c, a.path());
  run_stages(c, b.path(), "world", "data");
  run_stages(c, b.path(), "pms", "pms");
  run_stages(c, b.path(), "policies", "report");
  const auto ta = tree(a.path()), tb = tree(b.path());
  CHECK(ta.size() == tb.size());
  for (const auto& [name, content] : ta) {
    INFO(name);
    REQUIRE(tb.count(name) == 1);
    CHECK(content == tb.at(name));
  }
  for (const char* f : {"eval/summary.json", "eval/win_rates.csv", "eval/winrate_matrix.csv",
                        "eval/correlations.csv", "eval/ablation.csv", "eval/principle_accuracy.csv",
                        "report/index.json", "manifest.json"})
    CHECK(ta.count(f) == 1);
  const nlohmann::json summary = read_json_file(a.path() / "eval" / "summary.json");
  CHECK(summary.at("winrate_matrix_antisymmetric_counts").get<bool>());
  CHECK(read_json_file(a.path() / "manifest.json").at("stages").at("report") == "done");

  // The run directory refuses a different config.
  ExperimentConfig other = c;
  other.seed = c.seed + 1;
  CHECK_THROWS_AS(run_stages(other, a.path(), "eval", "eval"), ValidationError);
}

TEST_CASE("later stages need their inputs") {
  TempDir d("run_missing");
  const ExperimentConfig c = ExperimentConfig::preset("minimal");
  CHECK_THROWS_WITH_AS(run_stages(c, d.path(), "pms", "pms"), doctest::Contains("no manifest"), ValidationError);
  run_stages(c, d.path(), "world", "world");
  CHECK_THROWS_WITH_AS(run_stages(c, d.path(), "pms", "pms"), doctest::Contains("lacks stage 'data'"),
                       ValidationError);
  CHECK_THROWS_AS(run_stages(c, d.path(), "eval", "world"), ValidationError);
  CHECK_THROWS_AS(run_stages(c, d.path(), "bogus", "eval"), ValidationError);
}

TEST_CASE("a held lock blocks a second run") {
  TempDir d("run_lock");
  std::ofstream(d.path() / ".lock") << "12345\n";
  CHECK_THROWS_AS(run_pipeline(ExperimentConfig::preset("minimal"), d.path()), RuntimeFailure);
}

TEST_CASE("world serialization is lossless") {
  const ExperimentConfig c = ExperimentConfig::preset("minimal");
  const WorldAndSpace ws = build_world(c);
  const WorldAndSpace back = world_from_json(nlohmann::json::parse(world_to_json(ws.world, ws.space).dump()));
  CHECK(back.world.theta == ws.world.theta);
  CHECK(back.world.judge_weights == ws.world.judge_weights);
  CHECK(back.space.features == ws.space.features);
}

TEST_CASE("command-line exit codes") {
  TempDir d("cli");
  const std::string out = "--out " + (d.path() / "run").string();
  CHECK(cli("--help") == 0);
  CHECK(cli("--no-such-flag run") == 1);
  CHECK(cli(out + " eval") == 1);  // nothing simulated yet
  const fs::path bad = d.path() / "bad.json";
  std::ofstream(bad) << R"({"preset": "minimal", "seed": 1, "extra": true})";
  CHECK(cli("--config " + bad.string() + " " + out + " simulate") == 1);
  std::ofstream(d.path() / "broken.json") << "{not json";
  CHECK(cli("--config " + (d.path() / "broken.json").string() + " " + out + " simulate") == 1);
  CHECK(cli("--config minimal " + out + " run") == 0);
  CHECK(fs::exists(d.path() / "run" / "report" / "index.json"));
  // The manifest is picked up without --config.
  CHECK(cli(out + " report") == 0);
  CHECK(cli("export-prompts --dir " + (d.path() / "prompts").string()) == 0);
  CHECK(fs::exists(d.path() / "prompts" / "feedback_cot.txt"));
}
