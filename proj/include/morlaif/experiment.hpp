#ifndef MORLAIF_EXPERIMENT_HPP_
#define MORLAIF_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "morlaif/evaluation.hpp"
#include "morlaif/preference_data.hpp"
#include "morlaif/preference_model.hpp"
#include "morlaif/rl_trainer.hpp"
#include "morlaif/scalarization.hpp"
#include "morlaif/synthetic_env.hpp"

namespace morlaif {

// Principle names in the order the world indexes them.
std::vector<std::string> default_principle_names();       // all 13 listed names
std::vector<std::string> default_principles_used();       // the 12 used by default

struct DataConfig {
  int feedback_pairs = 100;          // labeled under every principle and the constitution
  double fit_fraction = 0.8;         // rest is split between calibration and test
  double calibration_fraction = 0.1;
  int weight_pairs = 4000;           // judge-labeled, fits the linear weights
  int test_pairs = 10000;            // judge-labeled, accuracy against true labels
  int correlation_pairs = 2000;      // labeled under every principle
};

struct ScalarizationEntry {
  ScalarizationSpec spec;  // weights filled at resolution time when fitted/equal
  enum class Weights { kFitted, kEqual, kExplicit } weights = Weights::kFitted;
  std::string name() const;
};

struct EnsembleConfig {
  int size = 12;
  std::vector<Variant> variants{Variant::kWorstCase, Variant::kUncertaintyWeighted, Variant::kSoftMaxMin,
                                Variant::kWeightedLinear};
  Variant policy_variant = Variant::kUncertaintyWeighted;
};

struct EvalConfig {
  int win_rate_samples = 10000;
  double tie_rate_target = 0.2;
  int tie_calibration_samples = 10000;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<std::string> principles = default_principle_names();
  std::vector<std::string> principles_used = default_principles_used();
  WorldConfig world;
  DataConfig data;
  FitConfig pm_fit;
  FitConfig weight_fit;
  FeatureMap::Kind feature_map = FeatureMap::Kind::kIdentity;  // identity or random_lift
  int lift_width = 64;
  bool weak_pm = true;
  int weak_pm_dim = 0;  // 0 means feature_dim / 2
  std::vector<ScalarizationEntry> scalarizations;
  PPOConfig ppo;
  bool baseline_single_objective = true;
  bool baseline_ensemble = true;
  EnsembleConfig ensemble;
  EvalConfig eval;

  // "minimal" (2 principles, 8 prompts, 4 templates) or "default".
  static ExperimentConfig preset(const std::string& name);
  // Unknown keys are rejected; absent keys take the default preset values.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
  // Throws ValidationError; returns human-readable warnings.
  std::vector<std::string> validate() const;
  int weak_dim() const { return weak_pm_dim > 0 ? weak_pm_dim : std::max(1, world.feature_dim / 2); }
};

// A preset name, a config file, or a run manifest (its config echo is used).
ExperimentConfig load_config(const std::string& name_or_path);

// ---- in-memory stages ------------------------------------------------------------

struct Datasets {
  std::vector<ResponsePair> feedback_pairs;
  std::vector<std::vector<ComparisonRecord>> principle_labels;  // [principle][pair]
  std::vector<ComparisonRecord> constitution;                   // OVERALL, one per feedback pair
  std::vector<ComparisonRecord> weight_fit;
  std::vector<ComparisonRecord> test;
  std::vector<std::vector<ComparisonRecord>> correlation_labels;  // [principle][pair]
  std::vector<ComparisonRecord> correlation_constitution;
};

// Contiguous fit / calibration / test ranges of the feedback records.
struct SplitSizes {
  size_t fit = 0;
  size_t calibration = 0;
  size_t test = 0;
};
SplitSizes split_sizes(const DataConfig& c);
std::vector<ComparisonRecord> fit_split(const std::vector<ComparisonRecord>& v, const DataConfig& c);
std::vector<ComparisonRecord> calibration_split(const std::vector<ComparisonRecord>& v, const DataConfig& c);
std::vector<ComparisonRecord> test_split(const std::vector<ComparisonRecord>& v, const DataConfig& c);

struct ModelSet {
  std::vector<PreferenceModel> principle_pms;
  LinearWeights weights;
  LinearWeights oracle_weights;  // fitted on latent scores
  std::optional<PreferenceModel> single;
  std::vector<PreferenceModel> ensemble;
  std::vector<PreferenceModel> weak_pms;
  std::optional<LinearWeights> weak_weights;
};

struct NamedPolicy {
  std::string name;
  Policy policy;
  std::vector<CurvePoint> curve;  // empty for untrained policies
};

WorldAndSpace build_world(const ExperimentConfig& c);
Policy build_reference(const ExperimentConfig& c, const ResponseSpace& space);
Datasets simulate_datasets(const ExperimentConfig& c, const World& world, const ResponseSpace& space,
                           const Policy& reference);
ModelSet fit_models(const ExperimentConfig& c, const World& world, const ResponseSpace& space, const Datasets& d);
// Resolves fitted / equal weights and validates every sweep entry.
CheckedSpec resolve_spec(const ScalarizationEntry& e, const ModelSet& m, Eigen::Index n);
std::vector<NamedPolicy> train_policies(const ExperimentConfig& c, const World& world, const ResponseSpace& space,
                                        const ModelSet& m, const Policy& reference);

// Metric tables (file name -> contents) plus the structured summary.
struct EvalOutput {
  std::map<std::string, std::string> tables;
  nlohmann::ordered_json summary;
};
EvalOutput evaluate(const ExperimentConfig& c, const World& world, const ResponseSpace& space, const Datasets& d,
                    const ModelSet& m, const std::vector<NamedPolicy>& policies);

// ---- run directory ------------------------------------------------------------------

inline constexpr const char* kStages[] = {"world", "data", "pms", "policies", "eval", "report"};

// Runs the stages in [first, last] (names from kStages) in `out`. Earlier
// stages must already be complete there. Each stage persists its outputs;
// a failing stage is recorded in the manifest and rethrown with its name.
void run_stages(const ExperimentConfig& c, const std::filesystem::path& out, const std::string& first,
                const std::string& last);
// All stages.
void run_pipeline(const ExperimentConfig& c, const std::filesystem::path& out);

// Renders report/ plot-data files from eval/.
void render_report(const std::filesystem::path& out);

nlohmann::ordered_json world_to_json(const World& w, const ResponseSpace& s);
WorldAndSpace world_from_json(const nlohmann::json& j);

}  // namespace morlaif

#endif  // MORLAIF_EXPERIMENT_HPP_
