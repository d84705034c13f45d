#include "morlaif/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "morlaif/errors.hpp"
#include "morlaif/json_util.hpp"
#include "morlaif/random.hpp"

namespace morlaif {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kManifestFormat = "morlaif-run-manifest/1";
constexpr const char* kVersion = "1.0.0";

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string principle_file(int i, const std::string& name) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d_", i);
  return buf + name;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

// ---- config (de)serialization -------------------------------------------------

ordered_json world_config_json(const WorldConfig& w) {
  ordered_json j;
  j["n_principles"] = w.n_principles;
  j["feature_dim"] = w.feature_dim;
  j["n_prompts"] = w.n_prompts;
  j["n_templates"] = w.n_templates;
  j["base_correlation"] = w.base_correlation;
  j["correlation"] = w.correlation ? ordered_json(matrix_to_json(*w.correlation)) : ordered_json(nullptr);
  j["sycophancy_mode"] = w.sycophancy_mode;
  j["sycophancy_index"] = w.sycophancy_index;
  j["sycophancy_correlation"] = w.sycophancy_correlation;
  j["sycophancy_weight"] = w.sycophancy_weight;
  j["judge_weight_min"] = w.judge_weight_min;
  j["judge_weight_max"] = w.judge_weight_max;
  j["judge_weights"] = w.judge_weights ? ordered_json(vector_to_json(*w.judge_weights)) : ordered_json(nullptr);
  j["annotator_temp_min"] = w.annotator_temp_min;
  j["annotator_temp_max"] = w.annotator_temp_max;
  j["annotator_temps"] =
      w.annotator_temps ? ordered_json(vector_to_json(*w.annotator_temps)) : ordered_json(nullptr);
  j["judge_temp"] = w.judge_temp;
  j["reference_logit_scale"] = w.reference_logit_scale;
  j["gamma"] = w.gamma;
  return j;
}

WorldConfig world_config_from_json(const json& j, WorldConfig w) {
  check_keys(j,
             {"n_principles", "feature_dim", "n_prompts", "n_templates", "base_correlation", "correlation",
              "sycophancy_mode", "sycophancy_index", "sycophancy_correlation", "sycophancy_weight",
              "judge_weight_min", "judge_weight_max", "judge_weights", "annotator_temp_min", "annotator_temp_max",
              "annotator_temps", "judge_temp", "reference_logit_scale", "gamma"},
             "world");
  w.n_principles = get_or(j, "n_principles", w.n_principles);
  w.feature_dim = get_or(j, "feature_dim", w.feature_dim);
  w.n_prompts = get_or(j, "n_prompts", w.n_prompts);
  w.n_templates = get_or(j, "n_templates", w.n_templates);
  w.base_correlation = get_or(j, "base_correlation", w.base_correlation);
  if (j.contains("correlation"))
    w.correlation = j["correlation"].is_null() ? std::nullopt
                                               : std::optional<Eigen::MatrixXd>(matrix_from_json(j["correlation"]));
  w.sycophancy_mode = get_or(j, "sycophancy_mode", w.sycophancy_mode);
  w.sycophancy_index = get_or(j, "sycophancy_index", w.sycophancy_index);
  w.sycophancy_correlation = get_or(j, "sycophancy_correlation", w.sycophancy_correlation);
  w.sycophancy_weight = get_or(j, "sycophancy_weight", w.sycophancy_weight);
  w.judge_weight_min = get_or(j, "judge_weight_min", w.judge_weight_min);
  w.judge_weight_max = get_or(j, "judge_weight_max", w.judge_weight_max);
  if (j.contains("judge_weights"))
    w.judge_weights = j["judge_weights"].is_null()
                          ? std::nullopt
                          : std::optional<Eigen::VectorXd>(vector_from_json(j["judge_weights"]));
  w.annotator_temp_min = get_or(j, "annotator_temp_min", w.annotator_temp_min);
  w.annotator_temp_max = get_or(j, "annotator_temp_max", w.annotator_temp_max);
  if (j.contains("annotator_temps"))
    w.annotator_temps = j["annotator_temps"].is_null()
                            ? std::nullopt
                            : std::optional<Eigen::VectorXd>(vector_from_json(j["annotator_temps"]));
  w.judge_temp = get_or(j, "judge_temp", w.judge_temp);
  w.reference_logit_scale = get_or(j, "reference_logit_scale", w.reference_logit_scale);
  w.gamma = get_or(j, "gamma", w.gamma);
  return w;
}

ordered_json fit_config_json(const FitConfig& f) {
  return {{"l2", f.l2}, {"max_iterations", f.max_iterations}, {"gradient_tolerance", f.gradient_tolerance}};
}

FitConfig fit_config_from_json(const json& j, FitConfig f, const char* ctx) {
  check_keys(j, {"l2", "max_iterations", "gradient_tolerance"}, ctx);
  f.l2 = get_or(j, "l2", f.l2);
  f.max_iterations = get_or(j, "max_iterations", f.max_iterations);
  f.gradient_tolerance = get_or(j, "gradient_tolerance", f.gradient_tolerance);
  return f;
}

Variant variant_from_json(const json& j) {
  if (!j.is_string()) throw ValidationError("scalarization variant must be a string");
  const auto v = parse_variant(j.get<std::string>());
  if (!v) throw ValidationError("unknown scalarization variant '" + j.get<std::string>() + "'");
  return *v;
}

ordered_json entry_json(const ScalarizationEntry& e) {
  ordered_json j;
  j["variant"] = to_string(e.spec.variant);
  if (e.spec.variant == Variant::kWeightedLinear) {
    if (e.weights == ScalarizationEntry::Weights::kFitted)
      j["weights"] = "fitted";
    else if (e.weights == ScalarizationEntry::Weights::kEqual)
      j["weights"] = "equal";
    else
      j["weights"] = vector_to_json(*e.spec.weights);
  }
  if (e.spec.temperature) j["temperature"] = *e.spec.temperature;
  if (e.spec.lambda) j["lambda"] = *e.spec.lambda;
  if (e.spec.alpha) j["alpha"] = *e.spec.alpha;
  if (e.spec.positivity_map) j["positivity_map"] = true;
  return j;
}

ScalarizationEntry entry_from_json(const json& j) {
  check_keys(j, {"variant", "weights", "temperature", "lambda", "alpha", "positivity_map"}, "scalarizations[]");
  ScalarizationEntry e;
  e.spec.variant = variant_from_json(j.at("variant"));
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    if (w.is_string() && w.get<std::string>() == "fitted") {
      e.weights = ScalarizationEntry::Weights::kFitted;
    } else if (w.is_string() && w.get<std::string>() == "equal") {
      e.weights = ScalarizationEntry::Weights::kEqual;
    } else if (w.is_array()) {
      e.weights = ScalarizationEntry::Weights::kExplicit;
      e.spec.weights = vector_from_json(w);
    } else {
      throw ValidationError("scalarization weights must be \"fitted\", \"equal\" or an array");
    }
    if (e.spec.variant != Variant::kWeightedLinear)
      throw ValidationError("weights are only meaningful for weighted_linear");
  }
  if (j.contains("temperature")) e.spec.temperature = get_or(j, "temperature", 0.0);
  if (j.contains("lambda")) e.spec.lambda = get_or(j, "lambda", 0.0);
  if (j.contains("alpha")) e.spec.alpha = get_or(j, "alpha", 0.0);
  e.spec.positivity_map = get_or(j, "positivity_map", e.spec.variant == Variant::kBernoulliNash);
  return e;
}

std::vector<ScalarizationEntry> default_sweep() {
  std::vector<ScalarizationEntry> v;
  for (Variant var : kAllVariants) {
    ScalarizationEntry e;
    e.spec.variant = var;
    e.spec.positivity_map = var == Variant::kBernoulliNash;
    v.push_back(e);
    if (var == Variant::kWeightedLinear) {
      ScalarizationEntry eq = e;
      eq.weights = ScalarizationEntry::Weights::kEqual;
      v.push_back(eq);
    }
  }
  return v;
}

// ---- persistence helpers ------------------------------------------------------------

void write_csv(const fs::path& p, const std::string& s) { write_text_file(p, s); }

ordered_json stage_status_json(const json& manifest) {
  ordered_json s;
  for (const char* st : kStages) {
    s[st] = manifest.contains("stages") && manifest["stages"].contains(st) ? manifest["stages"][st] : json("pending");
  }
  return s;
}

ordered_json design_decisions(const ExperimentConfig& c) {
  ordered_json d;
  d["preference_model"] = {{"form", "linear in features, bias fixed at 0 (unidentifiable from pairs)"},
                           {"tie_target", 0.5},
                           {"fit_calibration_test_split",
                            {c.data.fit_fraction, c.data.calibration_fraction,
                             1.0 - c.data.fit_fraction - c.data.calibration_fraction}},
                           {"calibration", "z-score with population std over calibration-split responses"},
                           {"objective_accuracy", "argmax of scalarized standardized PM scores"},
                           {"weights_reported", {"fitted", "equal"}}};
  d["scalarization"] = {{"temperature_default", kDefaultTemperature},
                        {"lambda_default", kDefaultLambda},
                        {"alpha_default", kDefaultAlpha},
                        {"uncertainty_weighted_inputs", "hard-clamped to the monotone domain"},
                        {"bernoulli_nash_positivity_map", "logistic"}};
  d["ppo"] = {{"optimizer", "adam"},
              {"baseline", "per-prompt running mean"},
              {"advantage_normalization", "batch z-score"},
              {"kl_controller", c.ppo.adaptive_kl ? "adaptive" : "fixed"},
              {"calibration_during_rl", "frozen"},
              {"config", to_json(c.ppo)}};
  d["evaluation"] = {{"headline_win_rate", "wins + 0.5 * ties"},
                     {"tie_rate_target", c.eval.tie_rate_target},
                     {"win_rate_pairs", "mirrored slot streams"}};
  d["weak_pm"] = {{"enabled", c.weak_pm}, {"projection_dim", c.weak_dim()}};
  d["ensemble"] = {{"size", c.ensemble.size}, {"resampling", "bootstrap of the single-objective fit split"}};
  return d;
}

std::vector<ComparisonRecord> slice(const std::vector<ComparisonRecord>& v, size_t begin, size_t count) {
  begin = std::min(begin, v.size());
  count = std::min(count, v.size() - begin);
  return {v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(begin + count)};
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<std::string> default_principle_names() {
  return {"helpfulness", "ethicality",        "factuality",     "toxicity", "sycophancy",
          "empathy",     "relevance",         "context",        "bias",     "understandability",
          "repetitiveness", "detail",          "conciseness"};
}

std::vector<std::string> default_principles_used() {
  auto v = default_principle_names();
  v.pop_back();  // "conciseness"
  return v;
}

std::string ScalarizationEntry::name() const {
  std::string n(to_string(spec.variant));
  if (spec.variant == Variant::kWeightedLinear) {
    if (weights == Weights::kEqual) n += "_equal";
    if (weights == Weights::kExplicit) n += "_explicit";
  }
  return n;
}

SplitSizes split_sizes(const DataConfig& c) {
  const auto n = static_cast<size_t>(c.feedback_pairs);
  SplitSizes s;
  s.fit = static_cast<size_t>(std::llround(c.fit_fraction * static_cast<double>(n)));
  s.calibration = static_cast<size_t>(std::llround(c.calibration_fraction * static_cast<double>(n)));
  s.fit = std::min(s.fit, n);
  s.calibration = std::min(s.calibration, n - s.fit);
  s.test = n - s.fit - s.calibration;
  return s;
}

std::vector<ComparisonRecord> fit_split(const std::vector<ComparisonRecord>& v, const DataConfig& c) {
  return slice(v, 0, split_sizes(c).fit);
}
std::vector<ComparisonRecord> calibration_split(const std::vector<ComparisonRecord>& v, const DataConfig& c) {
  const SplitSizes s = split_sizes(c);
  return slice(v, s.fit, s.calibration);
}
std::vector<ComparisonRecord> test_split(const std::vector<ComparisonRecord>& v, const DataConfig& c) {
  const SplitSizes s = split_sizes(c);
  return slice(v, s.fit + s.calibration, s.test);
}

// ---- ExperimentConfig -----------------------------------------------------------------

ExperimentConfig ExperimentConfig::preset(const std::string& name) {
  ExperimentConfig c;
  c.scalarizations = default_sweep();
  if (name == "default") return c;
  if (name == "minimal") {
    c.principles_used = {"helpfulness", "factuality"};
    c.world.n_principles = 2;
    c.world.feature_dim = 4;
    c.world.n_prompts = 8;
    c.world.n_templates = 4;
    c.world.sycophancy_mode = false;
    c.data.feedback_pairs = 100;
    c.data.weight_pairs = 500;
    c.data.test_pairs = 1000;
    c.data.correlation_pairs = 200;
    c.ppo.batch_size = 256;
    c.ppo.n_iterations = 50;
    c.eval.win_rate_samples = 2000;
    c.eval.tie_calibration_samples = 2000;
    return c;
  }
  throw ValidationError("unknown preset '" + name + "' (expected minimal or default)");
}

ordered_json ExperimentConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["principles"] = principles;
  j["principles_used"] = principles_used;
  j["world"] = world_config_json(world);
  j["data"] = {{"feedback_pairs", data.feedback_pairs},         {"fit_fraction", data.fit_fraction},
               {"calibration_fraction", data.calibration_fraction}, {"weight_pairs", data.weight_pairs},
               {"test_pairs", data.test_pairs},                  {"correlation_pairs", data.correlation_pairs}};
  j["pm_fit"] = fit_config_json(pm_fit);
  j["weight_fit"] = fit_config_json(weight_fit);
  j["feature_map"] = {{"kind", to_string(feature_map)}, {"lift_width", lift_width}};
  j["weak_pm"] = {{"enabled", weak_pm}, {"projection_dim", weak_pm_dim}};
  ordered_json sw = ordered_json::array();
  for (const auto& e : scalarizations) sw.push_back(entry_json(e));
  j["scalarizations"] = sw;
  j["ppo"] = morlaif::to_json(ppo);
  ordered_json b = ordered_json::array();
  if (baseline_single_objective) b.push_back("single_objective");
  if (baseline_ensemble) b.push_back("ensemble_12");
  j["baselines"] = b;
  ordered_json ev = ordered_json::array();
  for (Variant v : ensemble.variants) ev.push_back(to_string(v));
  j["ensemble"] = {{"size", ensemble.size}, {"variants", ev}, {"policy_variant", to_string(ensemble.policy_variant)}};
  j["eval"] = {{"win_rate_samples", eval.win_rate_samples},
               {"tie_rate_target", eval.tie_rate_target},
               {"tie_calibration_samples", eval.tie_calibration_samples}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j,
             {"preset", "seed", "principles", "principles_used", "world", "data", "pm_fit", "weight_fit",
              "feature_map", "weak_pm", "scalarizations", "ppo", "baselines", "ensemble", "eval"},
             "config");
  ExperimentConfig c = preset(get_or<std::string>(j, "preset", "default"));
  if (!j.contains("seed")) throw ValidationError("config: 'seed' is required");
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.principles = get_or(j, "principles", c.principles);
  c.principles_used = get_or(j, "principles_used", c.principles_used);
  if (j.contains("world")) c.world = world_config_from_json(j["world"], c.world);
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d,
               {"feedback_pairs", "fit_fraction", "calibration_fraction", "weight_pairs", "test_pairs",
                "correlation_pairs"},
               "data");
    c.data.feedback_pairs = get_or(d, "feedback_pairs", c.data.feedback_pairs);
    c.data.fit_fraction = get_or(d, "fit_fraction", c.data.fit_fraction);
    c.data.calibration_fraction = get_or(d, "calibration_fraction", c.data.calibration_fraction);
    c.data.weight_pairs = get_or(d, "weight_pairs", c.data.weight_pairs);
    c.data.test_pairs = get_or(d, "test_pairs", c.data.test_pairs);
    c.data.correlation_pairs = get_or(d, "correlation_pairs", c.data.correlation_pairs);
  }
  if (j.contains("pm_fit")) c.pm_fit = fit_config_from_json(j["pm_fit"], c.pm_fit, "pm_fit");
  if (j.contains("weight_fit")) c.weight_fit = fit_config_from_json(j["weight_fit"], c.weight_fit, "weight_fit");
  if (j.contains("feature_map")) {
    const auto& f = j["feature_map"];
    check_keys(f, {"kind", "lift_width"}, "feature_map");
    const std::string kind = get_or<std::string>(f, "kind", "identity");
    if (kind == "identity")
      c.feature_map = FeatureMap::Kind::kIdentity;
    else if (kind == "random_lift")
      c.feature_map = FeatureMap::Kind::kRandomLift;
    else
      throw ValidationError("feature_map.kind must be identity or random_lift");
    c.lift_width = get_or(f, "lift_width", c.lift_width);
  }
  if (j.contains("weak_pm")) {
    check_keys(j["weak_pm"], {"enabled", "projection_dim"}, "weak_pm");
    c.weak_pm = get_or(j["weak_pm"], "enabled", c.weak_pm);
    c.weak_pm_dim = get_or(j["weak_pm"], "projection_dim", c.weak_pm_dim);
  }
  if (j.contains("scalarizations")) {
    if (!j["scalarizations"].is_array()) throw ValidationError("scalarizations must be an array");
    c.scalarizations.clear();
    for (const auto& e : j["scalarizations"]) c.scalarizations.push_back(entry_from_json(e));
  }
  if (j.contains("ppo")) {
    json p = morlaif::to_json(c.ppo);
    for (const auto& [k, v] : j["ppo"].items()) {
      if (!p.contains(k)) throw ValidationError("ppo: unknown key '" + k + "'");
      p[k] = v;
    }
    c.ppo = ppo_config_from_json(p);
  }
  if (j.contains("baselines")) {
    if (!j["baselines"].is_array()) throw ValidationError("baselines must be an array");
    c.baseline_single_objective = c.baseline_ensemble = false;
    for (const auto& b : j["baselines"]) {
      const std::string s = b.is_string() ? b.get<std::string>() : "";
      if (s == "single_objective")
        c.baseline_single_objective = true;
      else if (s == "ensemble_12")
        c.baseline_ensemble = true;
      else
        throw ValidationError("unknown baseline '" + b.dump() + "'");
    }
  }
  if (j.contains("ensemble")) {
    const auto& e = j["ensemble"];
    check_keys(e, {"size", "variants", "policy_variant"}, "ensemble");
    c.ensemble.size = get_or(e, "size", c.ensemble.size);
    if (e.contains("variants")) {
      c.ensemble.variants.clear();
      for (const auto& v : e["variants"]) c.ensemble.variants.push_back(variant_from_json(v));
    }
    if (e.contains("policy_variant")) c.ensemble.policy_variant = variant_from_json(e["policy_variant"]);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    check_keys(e, {"win_rate_samples", "tie_rate_target", "tie_calibration_samples"}, "eval");
    c.eval.win_rate_samples = get_or(e, "win_rate_samples", c.eval.win_rate_samples);
    c.eval.tie_rate_target = get_or(e, "tie_rate_target", c.eval.tie_rate_target);
    c.eval.tie_calibration_samples = get_or(e, "tie_calibration_samples", c.eval.tie_calibration_samples);
  }
  c.validate();
  return c;
}

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> warnings;
  const std::set<std::string> known(principles.begin(), principles.end());
  if (known.size() != principles.size()) throw ValidationError("config: duplicate principle names");
  for (const auto& p : principles_used)
    if (!known.count(p)) throw ValidationError("config: principle '" + p + "' is not in the principle list");
  if (std::set<std::string>(principles_used.begin(), principles_used.end()).size() != principles_used.size())
    throw ValidationError("config: duplicate entries in principles_used");
  if (static_cast<int>(principles_used.size()) != world.n_principles)
    throw ValidationError("config: principles_used has " + std::to_string(principles_used.size()) +
                          " names but the world has " + std::to_string(world.n_principles) + " principles");
  if (principles.size() != principles_used.size())
    warnings.push_back("principle list has " + std::to_string(principles.size()) + " names; using the " +
                       std::to_string(principles_used.size()) + " in principles_used");
  if (world.n_principles < 1 || world.feature_dim < 1 || world.n_prompts < 1)
    throw ValidationError("config: world dimensions must be positive");
  if (world.n_templates < 2) throw ValidationError("config: world.n_templates must be at least 2");
  if (!(world.judge_temp > 0.0)) throw ValidationError("config: world.judge_temp must be positive");
  if (world.sycophancy_mode &&
      (world.sycophancy_index < 0 || world.sycophancy_index >= world.n_principles))
    throw ValidationError("config: sycophancy_index out of range");
  if (world.sycophancy_mode && principles_used[static_cast<size_t>(world.sycophancy_index)] != "sycophancy")
    warnings.push_back("anti-aligned principle index " + std::to_string(world.sycophancy_index) + " is named '" +
                       principles_used[static_cast<size_t>(world.sycophancy_index)] + "'");
  const SplitSizes s = split_sizes(data);
  if (!(data.fit_fraction > 0.0 && data.calibration_fraction > 0.0 &&
        data.fit_fraction + data.calibration_fraction < 1.0))
    throw ValidationError("config: fit and calibration fractions must be positive and leave a test split");
  if (s.fit < 2 || s.calibration < 1 || s.test < 1)
    throw ValidationError("config: feedback_pairs too small for the fit/calibration/test split");
  if (data.weight_pairs < 2 || data.test_pairs < 1 || data.correlation_pairs < 2)
    throw ValidationError("config: dataset sizes too small");
  if (pm_fit.l2 < 0.0 || weight_fit.l2 < 0.0) throw ValidationError("config: negative regularization");
  if (lift_width < 1) throw ValidationError("config: lift_width must be positive");
  if (weak_pm_dim < 0) throw ValidationError("config: weak_pm.projection_dim must be >= 0");
  if (scalarizations.empty()) throw ValidationError("config: at least one scalarization is required");
  std::set<std::string> names;
  for (const auto& e : scalarizations) {
    if (!names.insert(e.name()).second) throw ValidationError("config: duplicate scalarization '" + e.name() + "'");
    ScalarizationSpec probe = e.spec;
    if (e.spec.variant == Variant::kWeightedLinear && e.weights != ScalarizationEntry::Weights::kExplicit)
      probe.weights = Eigen::VectorXd::Ones(world.n_principles);
    validate_spec(probe, world.n_principles);
  }
  ppo.validate();
  if (ensemble.size < 1) throw ValidationError("config: ensemble size must be >= 1");
  if (ensemble.variants.empty()) throw ValidationError("config: ensemble needs at least one variant");
  if (baseline_ensemble && !baseline_single_objective)
    warnings.push_back("ensemble_12 is compared against the single-objective PM, which is fitted anyway");
  if (eval.win_rate_samples < 1 || eval.tie_calibration_samples < 1)
    throw ValidationError("config: eval sample counts must be positive");
  if (!(eval.tie_rate_target >= 0.0 && eval.tie_rate_target < 1.0))
    throw ValidationError("config: tie_rate_target must lie in [0, 1)");
  return warnings;
}

ExperimentConfig load_config(const std::string& name_or_path) {
  if (name_or_path == "minimal" || name_or_path == "default") return ExperimentConfig::preset(name_or_path);
  const fs::path p(name_or_path);
  if (!fs::exists(p))
    throw ValidationError("config '" + name_or_path + "' is neither a preset (minimal, default) nor a file");
  const json j = read_json_file(p);
  if (j.is_object() && j.contains("format") && j["format"] == kManifestFormat) {
    if (!j.contains("config")) throw ValidationError("manifest lacks a config echo");
    return ExperimentConfig::from_json(j["config"]);
  }
  return ExperimentConfig::from_json(j);
}

// ---- stages (in memory) ----------------------------------------------------------------------

WorldAndSpace build_world(const ExperimentConfig& c) { return make_world(c.world, c.seed); }

Policy build_reference(const ExperimentConfig& c, const ResponseSpace& space) {
  return make_reference_policy(space, c.world.reference_logit_scale, c.seed);
}

Datasets simulate_datasets(const ExperimentConfig& c, const World& world, const ResponseSpace& space,
                           const Policy& reference) {
  const int n = world.n_principles;
  std::vector<int> all(static_cast<size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  Datasets d;

  auto label_everywhere = [&](const std::vector<ResponsePair>& pairs, std::uint64_t set,
                              std::vector<std::vector<ComparisonRecord>>& per_principle,
                              std::vector<ComparisonRecord>& constitution) {
    per_principle.assign(static_cast<size_t>(n), {});
    for (int j = 0; j < n; ++j) {
      auto& out = per_principle[static_cast<size_t>(j)];
      out.reserve(pairs.size());
      for (const auto& p : pairs) {
        Rng rng = make_rng(c.seed, {kPrincipleLabelStream, set, p.index, static_cast<std::uint64_t>(j)});
        out.push_back(simulate_principle_label(world, space, p, j, rng));
      }
    }
    constitution.reserve(pairs.size());
    for (const auto& p : pairs) {
      Rng rng = make_rng(c.seed, {kConstitutionStream, set, p.index});
      constitution.push_back(simulate_constitution_label(world, space, p, all, rng));
    }
  };
  auto judge_set = [&](int count, std::uint64_t set) {
    Rng pr = make_rng(c.seed, {kPairStream, set});
    const auto pairs = generate_pairs(space, reference, count, pr);
    std::vector<ComparisonRecord> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
      Rng rng = make_rng(c.seed, {kJudgeStream, set, p.index});
      out.push_back(simulate_judge_label(world, space, p, JudgeProtocol{}, rng));
    }
    return out;
  };

  Rng pr = make_rng(c.seed, {kPairStream, 0});
  d.feedback_pairs = generate_pairs(space, reference, c.data.feedback_pairs, pr);
  label_everywhere(d.feedback_pairs, 0, d.principle_labels, d.constitution);
  d.weight_fit = judge_set(c.data.weight_pairs, 1);
  d.test = judge_set(c.data.test_pairs, 2);
  Rng cr = make_rng(c.seed, {kPairStream, 3});
  const auto corr_pairs = generate_pairs(space, reference, c.data.correlation_pairs, cr);
  label_everywhere(corr_pairs, 3, d.correlation_labels, d.correlation_constitution);
  return d;
}

ModelSet fit_models(const ExperimentConfig& c, const World& world, const ResponseSpace& space, const Datasets& d) {
  const int n = world.n_principles;
  ModelSet m;
  const FeatureMap features = c.feature_map == FeatureMap::Kind::kRandomLift
                                  ? FeatureMap::random_lift(space.feature_dim(), c.lift_width, c.seed)
                                  : FeatureMap::identity();

  std::vector<std::vector<ComparisonRecord>> fit_sets;
  for (int j = 0; j < n; ++j) fit_sets.push_back(fit_split(d.principle_labels[static_cast<size_t>(j)], c.data));
  m.principle_pms = fit_pms(fit_sets, space, c.pm_fit, features);
  for (int j = 0; j < n; ++j)
    calibrate(m.principle_pms[static_cast<size_t>(j)], calibration_split(d.principle_labels[static_cast<size_t>(j)], c.data),
              space);
  m.weights = fit_linear_weights(m.principle_pms, d.weight_fit, d.test, space, c.weight_fit);
  m.oracle_weights =
      fit_linear_weights_on_table(latent_score_table(world, space), d.weight_fit, d.test, space, c.weight_fit);

  const auto single_fit = fit_split(d.constitution, c.data);
  const auto single_cal = calibration_split(d.constitution, c.data);
  if (c.baseline_single_objective || c.baseline_ensemble) {
    m.single = fit_pm(single_fit, space, c.pm_fit, features);
    calibrate(*m.single, single_cal, space);
  }
  if (c.baseline_ensemble) {
    m.ensemble = fit_bootstrap_ensemble(single_fit, space, c.pm_fit, c.ensemble.size, c.seed, features);
    for (auto& pm : m.ensemble) calibrate(pm, single_cal, space);
  }
  if (c.weak_pm) {
    const FeatureMap weak = FeatureMap::projection(space.feature_dim(), c.weak_dim(), c.seed);
    m.weak_pms = fit_pms(fit_sets, space, c.pm_fit, weak);
    for (int j = 0; j < n; ++j)
      calibrate(m.weak_pms[static_cast<size_t>(j)], calibration_split(d.principle_labels[static_cast<size_t>(j)], c.data),
                space);
    m.weak_weights = fit_linear_weights(m.weak_pms, d.weight_fit, d.test, space, c.weight_fit);
  }
  return m;
}

CheckedSpec resolve_spec(const ScalarizationEntry& e, const ModelSet& m, Eigen::Index n) {
  ScalarizationSpec s = e.spec;
  if (s.variant == Variant::kWeightedLinear) {
    if (e.weights == ScalarizationEntry::Weights::kFitted) s.weights = m.weights.w;
    if (e.weights == ScalarizationEntry::Weights::kEqual) s.weights = Eigen::VectorXd::Ones(n);
  }
  return validate_spec(s, n);
}

namespace {

CheckedSpec ceiling_spec(const ScalarizationEntry& e, const ModelSet& m, Eigen::Index n) {
  ScalarizationSpec s = e.spec;
  if (s.variant == Variant::kWeightedLinear) {
    if (e.weights == ScalarizationEntry::Weights::kFitted) s.weights = m.oracle_weights.w;
    if (e.weights == ScalarizationEntry::Weights::kEqual) s.weights = Eigen::VectorXd::Ones(n);
  }
  return validate_spec(s, n);
}

CheckedSpec ensemble_spec(Variant v, Eigen::Index n) {
  ScalarizationSpec s;
  s.variant = v;
  if (v == Variant::kWeightedLinear) s.weights = Eigen::VectorXd::Ones(n);
  s.positivity_map = v == Variant::kBernoulliNash;
  return validate_spec(s, n);
}

std::string ensemble_name(Variant v) { return "ensemble_" + std::string(to_string(v)); }

}  // namespace

std::vector<NamedPolicy> train_policies(const ExperimentConfig& c, const World& world, const ResponseSpace& space,
                                        const ModelSet& m, const Policy& reference) {
  const auto n = static_cast<Eigen::Index>(world.n_principles);
  std::vector<NamedPolicy> out;
  out.push_back({"sft-reference", reference, {}});
  auto run = [&](const std::string& name, const ScalarizedReward& reward) {
    PPOConfig pc = c.ppo;
    pc.seed = derive_seed(c.seed, {kPpoStream, fnv1a(name)});
    TrainResult r = train(space, reward, pc, reference);
    out.push_back({name, std::move(r.policy), std::move(r.curve)});
  };
  if (m.single) {
    ScalarizationSpec s;
    s.weights = Eigen::VectorXd::Ones(1);
    const std::vector<PreferenceModel> one{*m.single};
    run("single_objective", ScalarizedReward::from_models(one, validate_spec(s, 1), space));
  }
  if (!m.ensemble.empty()) {
    const auto k = static_cast<Eigen::Index>(m.ensemble.size());
    run(ensemble_name(c.ensemble.policy_variant),
        ScalarizedReward::from_models(m.ensemble, ensemble_spec(c.ensemble.policy_variant, k), space));
  }
  for (const auto& e : c.scalarizations)
    run("morlaif_" + e.name(), ScalarizedReward::from_models(m.principle_pms, resolve_spec(e, m, n), space));
  if (m.weak_weights) {
    ScalarizationSpec s;
    s.weights = m.weak_weights->w;
    run("weak_morlaif_weighted_linear", ScalarizedReward::from_models(m.weak_pms, validate_spec(s, n), space));
  }
  Eigen::VectorXd utility(space.features.rows());
  for (int p = 0; p < space.n_prompts; ++p)
    for (int k = 0; k < space.n_templates; ++k) utility(space.row(p, k)) = true_utility(world, space, p, k);
  out.push_back({"oracle", exact_best_response_table(space, utility), {}});
  return out;
}

EvalOutput evaluate(const ExperimentConfig& c, const World& world, const ResponseSpace& space, const Datasets& d,
                    const ModelSet& m, const std::vector<NamedPolicy>& policies) {
  const int n = world.n_principles;
  const auto nn = static_cast<Eigen::Index>(n);
  const auto& names = c.principles_used;
  EvalOutput out;
  ordered_json& s = out.summary;
  s["seed"] = c.seed;
  s["principles"] = names;

  // Per-principle PM accuracy on principle labels the PM never saw: the
  // large correlation set, and the small test split of the feedback data.
  {
    std::string t = "principle,accuracy,n,weak_accuracy,split_accuracy,n_split\n";
    std::vector<double> accs;
    ordered_json pj;
    for (int j = 0; j < n; ++j) {
      const auto& held = d.correlation_labels[static_cast<size_t>(j)];
      const auto split = test_split(d.principle_labels[static_cast<size_t>(j)], c.data);
      const double a = pm_accuracy(m.principle_pms[static_cast<size_t>(j)], held, space);
      const double wa = m.weak_pms.empty() ? std::nan("") : pm_accuracy(m.weak_pms[static_cast<size_t>(j)], held, space);
      const double sa = pm_accuracy(m.principle_pms[static_cast<size_t>(j)], split, space);
      accs.push_back(a);
      pj[names[static_cast<size_t>(j)]] = a;
      t += csv_escape(names[static_cast<size_t>(j)]) + "," + format_double(a) + "," + std::to_string(held.size()) +
           "," + (std::isnan(wa) ? std::string() : format_double(wa)) + "," + format_double(sa) + "," +
           std::to_string(split.size()) + "\n";
    }
    out.tables["principle_accuracy.csv"] = t;
    s["principle_pm_accuracy"] = pj;
    s["mean_principle_pm_accuracy"] = mean_of(accs);
  }

  // Accuracy against true (judge) labels.
  {
    std::string t = "configuration,kind,accuracy\n";
    ordered_json acc, ceil;
    auto row = [&](const std::string& name, const char* kind, double a) {
      t += csv_escape(name) + "," + kind + "," + format_double(a) + "\n";
    };
    if (m.single) {
      const double a = pm_accuracy(*m.single, d.test, space);
      row("single_objective", "single_pm", a);
      s["single_pm_accuracy"] = a;
    }
    if (!m.ensemble.empty()) {
      ordered_json ej;
      for (Variant v : c.ensemble.variants) {
        const double a = multiobjective_accuracy(
            m.ensemble, ensemble_spec(v, static_cast<Eigen::Index>(m.ensemble.size())), d.test, space);
        row(ensemble_name(v), "ensemble", a);
        ej[std::string(to_string(v))] = a;
      }
      s["ensemble_accuracy"] = ej;
    }
    for (const auto& e : c.scalarizations) {
      const double a = multiobjective_accuracy(m.principle_pms, resolve_spec(e, m, nn), d.test, space);
      row("morlaif_" + e.name(), "multi_objective", a);
      acc[e.name()] = a;
    }
    if (m.weak_weights) {
      ScalarizationSpec ws;
      ws.weights = m.weak_weights->w;
      const double a = multiobjective_accuracy(m.weak_pms, validate_spec(ws, nn), d.test, space);
      row("weak_morlaif_weighted_linear", "weak_multi_objective", a);
      s["weak_morlaif_accuracy"] = a;
    }
    for (const auto& e : c.scalarizations) {
      const double a = ceiling_accuracy(world, space, ceiling_spec(e, m, nn), d.test);
      row("ceiling_" + e.name(), "ceiling", a);
      ceil[e.name()] = a;
    }
    out.tables["objective_accuracy.csv"] = t;
    s["objective_accuracy"] = acc;
    s["ceiling_accuracy"] = ceil;
  }

  // Linear weights and the effect of zeroing the anti-aligned principle.
  {
    std::string t = "principle,weight,oracle_weight,weak_weight\n";
    ordered_json wj;
    for (int j = 0; j < n; ++j) {
      t += csv_escape(names[static_cast<size_t>(j)]) + "," + format_double(m.weights.w(j)) + "," +
           format_double(m.oracle_weights.w(j)) + "," +
           (m.weak_weights ? format_double(m.weak_weights->w(j)) : std::string()) + "\n";
      wj[names[static_cast<size_t>(j)]] = m.weights.w(j);
    }
    out.tables["linear_weights.csv"] = t;
    s["linear_weights"] = wj;
    s["linear_weights_held_out_accuracy"] = m.weights.held_out_accuracy;
    if (world.sycophancy_index) {
      const int k = *world.sycophancy_index;
      ScalarizationSpec full, zeroed;
      full.weights = m.weights.w;
      zeroed.weights = m.weights.w;
      (*zeroed.weights)(k) = 0.0;
      const double a_full = multiobjective_accuracy(m.principle_pms, validate_spec(full, nn), d.test, space);
      const double a_zero = multiobjective_accuracy(m.principle_pms, validate_spec(zeroed, nn), d.test, space);
      s["anti_aligned"] = {{"principle", names[static_cast<size_t>(k)]},
                           {"index", k},
                           {"weight", m.weights.w(k)},
                           {"accuracy", a_full},
                           {"accuracy_weight_zeroed", a_zero},
                           {"accuracy_change", a_zero - a_full}};
    }
  }

  // Win rates against the single-objective baseline policy, both protocols.
  {
    const auto find = [&](const std::string& name) -> const NamedPolicy* {
      for (const auto& p : policies)
        if (p.name == name) return &p;
      return nullptr;
    };
    const NamedPolicy* base = find("single_objective");
    std::string t = win_rate_csv_header();
    ordered_json wj;
    if (base) {
      for (const auto& p : policies) {
        if (p.name == base->name) continue;
        const std::uint64_t seed = derive_seed(c.seed, {kWinRateStream, fnv1a(p.name)});
        WinRateProtocol no_tie;
        const WinRateResult r = win_rate(p.policy, base->policy, world, space, no_tie, c.eval.win_rate_samples, seed);
        WinRateProtocol tie;
        tie.ties = TieProtocol::kWithTie;
        tie.tie_band = calibrate_tie_band(p.policy, base->policy, world, space, c.eval.tie_rate_target,
                                          c.eval.tie_calibration_samples, seed);
        const WinRateResult rt = win_rate(p.policy, base->policy, world, space, tie, c.eval.win_rate_samples, seed);
        t += win_rate_csv_row(p.name, base->name, r);
        t += win_rate_csv_row(p.name, base->name, rt);
        wj[p.name] = {{"without_tie", to_json(r)}, {"with_tie", to_json(rt)}, {"tie_band", tie.tie_band}};
      }
    }
    out.tables["win_rates.csv"] = t;
    s["win_rates_vs_single_objective"] = wj;

    std::vector<Policy> group;
    std::vector<std::string> group_names;
    for (const auto& p : policies)
      if (p.name == "single_objective" || p.name.rfind("morlaif_", 0) == 0) {
        group.push_back(p.policy);
        group_names.push_back(p.name);
      }
    if (group.size() >= 2) {
      const WinRateMatrix wm = winrate_matrix(group, world, space, WinRateProtocol{}, c.eval.win_rate_samples,
                                              derive_seed(c.seed, {kWinRateStream, 0}));
      out.tables["winrate_matrix.csv"] = matrix_csv(group_names, wm.rate);
      bool exact = true;
      for (size_t i = 0; i < group.size(); ++i)
        for (size_t j = 0; j < group.size(); ++j)
          if (i != j) exact = exact && wm.cells[i][j].wins == wm.cells[j][i].losses && wm.cells[i][j].ties == wm.cells[j][i].ties;
      s["winrate_matrix_antisymmetric_counts"] = exact;
    }
    ordered_json utilities;
    Eigen::VectorXd utility(space.features.rows());
    for (int p = 0; p < space.n_prompts; ++p)
      for (int k = 0; k < space.n_templates; ++k) utility(space.row(p, k)) = true_utility(world, space, p, k);
    for (const auto& p : policies) utilities[p.name] = expected_reward(p.policy, utility, space);
    s["expected_true_utility"] = utilities;
  }

  // Label correlations between principles (and the constitution labels).
  {
    auto cols = d.correlation_labels;
    cols.push_back(d.correlation_constitution);
    const Eigen::MatrixXd corr = principle_correlations(label_matrix(cols));
    std::vector<std::string> cn = names;
    cn.push_back("single_objective");
    out.tables["correlations.csv"] = matrix_csv(cn, corr);
    const Eigen::MatrixXd block = corr.topLeftCorner(nn, nn);
    int argmin = -1;
    double best = std::numeric_limits<double>::infinity();
    ordered_json mj;
    for (int i = 0; i < n; ++i) {
      double sum = 0.0;
      int cnt = 0;
      for (int j = 0; j < n; ++j)
        if (j != i && !std::isnan(block(i, j))) {
          sum += block(i, j);
          ++cnt;
        }
      const double mean = cnt ? sum / cnt : std::nan("");
      mj[names[static_cast<size_t>(i)]] = cnt ? json(mean) : json(nullptr);
      if (cnt && mean < best) {
        best = mean;
        argmin = i;
      }
    }
    s["mean_offdiagonal_correlation"] = mj;
    s["least_correlated_principle"] = argmin >= 0 ? json(names[static_cast<size_t>(argmin)]) : json(nullptr);
  }

  // Principle-count ablation, lowest fitted weight removed first.
  {
    const auto order = ascending_weight_order(m.weights.w);
    const auto curve = ablation_curve(m.principle_pms, world, space, d.weight_fit, d.test, order, c.weight_fit);
    out.tables["ablation.csv"] = ablation_csv(curve);
    ordered_json aj = ordered_json::array();
    for (const auto& p : curve) aj.push_back({{"k", p.k}, {"accuracy", p.accuracy}, {"ceiling", p.ceiling}});
    s["ablation"] = aj;
    s["ablation_first_removed"] = names[static_cast<size_t>(order.front())];
  }
  return out;
}

// ---- persistence ---------------------------------------------------------------------------------

ordered_json world_to_json(const World& w, const ResponseSpace& s) {
  ordered_json j;
  j["n_principles"] = w.n_principles;
  j["feature_dim"] = w.feature_dim;
  j["seed"] = w.seed;
  j["theta"] = matrix_to_json(w.theta);
  j["target_correlation"] = matrix_to_json(w.target_correlation);
  j["judge_weights"] = vector_to_json(w.judge_weights);
  j["annotator_temps"] = vector_to_json(w.annotator_temps);
  j["judge_temp"] = w.judge_temp;
  j["sycophancy_index"] = w.sycophancy_index ? json(*w.sycophancy_index) : json(nullptr);
  j["gamma"] = w.gamma;
  j["space"] = {{"n_prompts", s.n_prompts},
                {"n_templates", s.n_templates},
                {"prompt_features", matrix_to_json(s.prompt_features)},
                {"features", matrix_to_json(s.features)}};
  return j;
}

WorldAndSpace world_from_json(const json& j) {
  try {
    WorldAndSpace ws;
    World& w = ws.world;
    w.n_principles = j.at("n_principles").get<int>();
    w.feature_dim = j.at("feature_dim").get<int>();
    w.seed = j.at("seed").get<std::uint64_t>();
    w.theta = matrix_from_json(j.at("theta"));
    w.target_correlation = matrix_from_json(j.at("target_correlation"));
    w.judge_weights = vector_from_json(j.at("judge_weights"));
    w.annotator_temps = vector_from_json(j.at("annotator_temps"));
    w.judge_temp = j.at("judge_temp").get<double>();
    if (!j.at("sycophancy_index").is_null()) w.sycophancy_index = j["sycophancy_index"].get<int>();
    w.gamma = j.at("gamma").get<double>();
    const auto& s = j.at("space");
    ws.space.n_prompts = s.at("n_prompts").get<int>();
    ws.space.n_templates = s.at("n_templates").get<int>();
    ws.space.prompt_features = matrix_from_json(s.at("prompt_features"));
    ws.space.features = matrix_from_json(s.at("features"));
    if (ws.space.features.rows() != static_cast<Eigen::Index>(ws.space.n_prompts) * ws.space.n_templates)
      throw ValidationError("world: feature table does not match the response space");
    return ws;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("world: ") + e.what());
  }
}

namespace {

// Stage inputs and outputs on disk.
class RunDir {
 public:
  RunDir(const ExperimentConfig& c, fs::path root) : c_(c), root_(std::move(root)) {}

  fs::path path(const std::string& rel) const { return root_ / rel; }

  void save_world(const WorldAndSpace& ws, const Policy& reference) const {
    write_json_file(path("world/world.json"), world_to_json(ws.world, ws.space));
    write_json_file(path("world/reference_policy.json"), to_json(reference));
  }
  WorldAndSpace load_world() const { return world_from_json(read_json_file(path("world/world.json"))); }
  Policy load_reference() const { return policy_from_json(read_json_file(path("world/reference_policy.json"))); }

  void save_data(const Datasets& d) const {
    fs::create_directories(path("data/feedback"));
    fs::create_directories(path("data/correlation"));
    const auto& names = c_.principles_used;
    for (size_t j = 0; j < names.size(); ++j) {
      write_records(path("data/feedback/" + principle_file(static_cast<int>(j), names[j]) + ".jsonl"),
                    d.principle_labels[j]);
      write_records(path("data/correlation/" + principle_file(static_cast<int>(j), names[j]) + ".jsonl"),
                    d.correlation_labels[j]);
    }
    write_records(path("data/feedback/constitution.jsonl"), d.constitution);
    write_records(path("data/correlation/constitution.jsonl"), d.correlation_constitution);
    write_records(path("data/weight_fit.jsonl"), d.weight_fit);
    write_records(path("data/test.jsonl"), d.test);
    const SplitSizes s = split_sizes(c_.data);
    write_json_file(path("data/splits.json"), ordered_json{{"fit", s.fit}, {"calibration", s.calibration}, {"test", s.test}});
  }
  Datasets load_data() const {
    Datasets d;
    const auto& names = c_.principles_used;
    for (size_t j = 0; j < names.size(); ++j) {
      d.principle_labels.push_back(
          read_records(path("data/feedback/" + principle_file(static_cast<int>(j), names[j]) + ".jsonl")));
      d.correlation_labels.push_back(
          read_records(path("data/correlation/" + principle_file(static_cast<int>(j), names[j]) + ".jsonl")));
    }
    d.constitution = read_records(path("data/feedback/constitution.jsonl"));
    d.correlation_constitution = read_records(path("data/correlation/constitution.jsonl"));
    d.weight_fit = read_records(path("data/weight_fit.jsonl"));
    d.test = read_records(path("data/test.jsonl"));
    return d;
  }

  void save_models(const ModelSet& m) const {
    const auto& names = c_.principles_used;
    ordered_json index;
    index["principles"] = names;
    for (size_t j = 0; j < m.principle_pms.size(); ++j)
      write_json_file(path("pms/principle_" + principle_file(static_cast<int>(j), names[j]) + ".json"),
                      to_json(m.principle_pms[j]));
    write_json_file(path("pms/linear_weights.json"), to_json(m.weights));
    write_json_file(path("pms/oracle_weights.json"), to_json(m.oracle_weights));
    index["single_objective"] = m.single.has_value();
    if (m.single) write_json_file(path("pms/single_objective.json"), to_json(*m.single));
    index["ensemble_size"] = m.ensemble.size();
    for (size_t k = 0; k < m.ensemble.size(); ++k)
      write_json_file(path("pms/ensemble_" + std::to_string(k) + ".json"), to_json(m.ensemble[k]));
    index["weak"] = m.weak_weights.has_value();
    for (size_t j = 0; j < m.weak_pms.size(); ++j)
      write_json_file(path("pms/weak_" + principle_file(static_cast<int>(j), names[j]) + ".json"),
                      to_json(m.weak_pms[j]));
    if (m.weak_weights) write_json_file(path("pms/weak_linear_weights.json"), to_json(*m.weak_weights));
    write_json_file(path("pms/index.json"), index);
  }
  ModelSet load_models() const {
    const auto& names = c_.principles_used;
    const json index = read_json_file(path("pms/index.json"));
    ModelSet m;
    for (size_t j = 0; j < names.size(); ++j)
      m.principle_pms.push_back(preference_model_from_json(
          read_json_file(path("pms/principle_" + principle_file(static_cast<int>(j), names[j]) + ".json"))));
    m.weights = linear_weights_from_json(read_json_file(path("pms/linear_weights.json")));
    m.oracle_weights = linear_weights_from_json(read_json_file(path("pms/oracle_weights.json")));
    if (index.at("single_objective").get<bool>())
      m.single = preference_model_from_json(read_json_file(path("pms/single_objective.json")));
    const auto k = index.at("ensemble_size").get<size_t>();
    for (size_t i = 0; i < k; ++i)
      m.ensemble.push_back(
          preference_model_from_json(read_json_file(path("pms/ensemble_" + std::to_string(i) + ".json"))));
    if (index.at("weak").get<bool>()) {
      for (size_t j = 0; j < names.size(); ++j)
        m.weak_pms.push_back(preference_model_from_json(
            read_json_file(path("pms/weak_" + principle_file(static_cast<int>(j), names[j]) + ".json"))));
      m.weak_weights = linear_weights_from_json(read_json_file(path("pms/weak_linear_weights.json")));
    }
    return m;
  }

  void save_policies(const std::vector<NamedPolicy>& ps) const {
    ordered_json index = ordered_json::array();
    for (const auto& p : ps) {
      ordered_json j;
      j["name"] = p.name;
      j["seed"] = c_.seed;
      j["ppo_config"] = p.curve.empty() ? ordered_json(nullptr) : to_json(c_.ppo);
      j["policy"] = to_json(p.policy);
      write_json_file(path("policies/" + p.name + ".json"), j);
      if (!p.curve.empty()) write_csv(path("policies/" + p.name + "_curve.csv"), curve_csv(p.curve));
      index.push_back(p.name);
    }
    write_json_file(path("policies/index.json"), index);
  }
  std::vector<NamedPolicy> load_policies() const {
    std::vector<NamedPolicy> ps;
    for (const auto& name : read_json_file(path("policies/index.json"))) {
      const json j = read_json_file(path("policies/" + name.get<std::string>() + ".json"));
      ps.push_back({name.get<std::string>(), policy_from_json(j.at("policy")), {}});
    }
    return ps;
  }

  void save_eval(const EvalOutput& e) const {
    for (const auto& [file, text] : e.tables) write_csv(path("eval/" + file), text);
    write_json_file(path("eval/summary.json"), e.summary);
  }

 private:
  const ExperimentConfig& c_;
  fs::path root_;
};

class LockFile {
 public:
  explicit LockFile(fs::path p) : path_(std::move(p)) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      throw RuntimeFailure("run directory is locked by another process (" + path_.string() +
                           "); remove the file if no run is active");
    std::fclose(f);
  }
  ~LockFile() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  fs::path path_;
};

int stage_index(const std::string& s) {
  for (int i = 0; i < static_cast<int>(std::size(kStages)); ++i)
    if (s == kStages[i]) return i;
  throw ValidationError("unknown stage '" + s + "'");
}

const char* stage_command(int i) {
  static const char* cmd[] = {"simulate", "simulate", "fit-pms", "train", "eval", "report"};
  return cmd[i];
}

}  // namespace

void run_stages(const ExperimentConfig& c, const fs::path& out, const std::string& first, const std::string& last) {
  const int a = stage_index(first);
  const int b = stage_index(last);
  if (a > b) throw ValidationError("stage range is empty");
  const std::vector<std::string> warnings = c.validate();
  fs::create_directories(out);
  LockFile lock(out / ".lock");

  const fs::path manifest_path = out / "manifest.json";
  json manifest = fs::exists(manifest_path) ? read_json_file(manifest_path) : json::object();
  if (a > 0) {
    if (!manifest.contains("config"))
      throw ValidationError("run directory " + out.string() + " has no manifest; run simulate first");
    if (ExperimentConfig::from_json(manifest["config"]).to_json() != c.to_json())
      throw ValidationError("config differs from the one recorded in " + manifest_path.string());
    for (int i = 0; i < a; ++i)
      if (!manifest.contains("stages") || manifest["stages"].value(kStages[i], "") != "done")
        throw ValidationError(std::string("run directory lacks stage '") + kStages[i] + "' (run `" +
                              stage_command(i) + "` first)");
  } else {
    manifest = json::object();
  }
  ordered_json m;
  m["format"] = kManifestFormat;
  m["version"] = kVersion;
  m["seed"] = c.seed;
  m["config"] = c.to_json();
  m["design_decisions"] = design_decisions(c);
  m["warnings"] = warnings;
  m["stages"] = stage_status_json(manifest);
  for (int i = a; i < static_cast<int>(std::size(kStages)); ++i) m["stages"][kStages[i]] = "pending";
  write_json_file(manifest_path, m);

  RunDir dir(c, out);
  for (int i = a; i <= b; ++i) {
    const std::string stage = kStages[i];
    try {
      if (stage == "world") {
        const WorldAndSpace ws = build_world(c);
        dir.save_world(ws, build_reference(c, ws.space));
      } else if (stage == "data") {
        const WorldAndSpace ws = dir.load_world();
        dir.save_data(simulate_datasets(c, ws.world, ws.space, dir.load_reference()));
      } else if (stage == "pms") {
        const WorldAndSpace ws = dir.load_world();
        dir.save_models(fit_models(c, ws.world, ws.space, dir.load_data()));
      } else if (stage == "policies") {
        const WorldAndSpace ws = dir.load_world();
        dir.save_policies(train_policies(c, ws.world, ws.space, dir.load_models(), dir.load_reference()));
      } else if (stage == "eval") {
        const WorldAndSpace ws = dir.load_world();
        dir.save_eval(evaluate(c, ws.world, ws.space, dir.load_data(), dir.load_models(), dir.load_policies()));
      } else {
        render_report(out);
      }
    } catch (const ValidationError& e) {
      m["stages"][stage] = "failed";
      write_json_file(manifest_path, m);
      throw ValidationError("stage '" + stage + "' failed: " + e.what());
    } catch (const std::exception& e) {
      m["stages"][stage] = "failed";
      write_json_file(manifest_path, m);
      throw RuntimeFailure("stage '" + stage + "' failed: " + e.what());
    }
    m["stages"][stage] = "done";
    write_json_file(manifest_path, m);
  }
}

void run_pipeline(const ExperimentConfig& c, const fs::path& out) { run_stages(c, out, "world", "report"); }

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
      const char ch = line[i];
      if (quoted) {
        if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else if (ch == '"') {
          quoted = false;
        } else {
          cell += ch;
        }
      } else if (ch == '"') {
        quoted = true;
      } else if (ch == ',') {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell += ch;
      }
    }
    cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

size_t column(const std::vector<std::string>& header, const std::string& name, const std::string& file) {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ValidationError(file + " lacks column '" + name + "'");
}

// "# label" lines followed by "x y" rows; categorical x becomes its index.
std::string series(const std::vector<std::vector<std::string>>& rows, size_t xcol, size_t ycol, bool categorical,
                   const std::vector<std::string>* filter_col_values = nullptr, size_t filter_col = 0) {
  std::string s = "# x y" + std::string(categorical ? " label" : "") + "\n";
  int idx = 0;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() <= std::max(xcol, ycol) || row[ycol].empty()) continue;
    if (filter_col_values &&
        std::find(filter_col_values->begin(), filter_col_values->end(), row[filter_col]) == filter_col_values->end())
      continue;
    if (categorical)
      s += std::to_string(idx++) + " " + row[ycol] + " " + row[xcol] + "\n";
    else
      s += row[xcol] + " " + row[ycol] + "\n";
  }
  return s;
}

}  // namespace

void render_report(const fs::path& out) {
  const fs::path eval = out / "eval";
  if (!fs::exists(eval / "summary.json")) throw ValidationError("run directory lacks stage 'eval' (run `eval` first)");
  ordered_json index = ordered_json::array();
  auto emit = [&](const std::string& file, const std::string& title, const std::string& x, const std::string& y,
                  const std::string& body) {
    write_text_file(out / "report" / file, body);
    index.push_back({{"file", file}, {"title", title}, {"x", x}, {"y", y}});
  };

  const auto pa = parse_csv(read_text_file(eval / "principle_accuracy.csv"));
  emit("principle_accuracy.dat", "Per-principle PM accuracy", "principle", "accuracy",
       series(pa, column(pa[0], "principle", "principle_accuracy.csv"),
              column(pa[0], "accuracy", "principle_accuracy.csv"), true));

  const auto oa = parse_csv(read_text_file(eval / "objective_accuracy.csv"));
  const size_t kind = column(oa[0], "kind", "objective_accuracy.csv");
  const std::vector<std::string> fitted{"single_pm", "ensemble", "multi_objective", "weak_multi_objective"};
  const std::vector<std::string> ceiling{"ceiling"};
  emit("objective_accuracy.dat", "Accuracy on true labels", "configuration", "accuracy",
       series(oa, column(oa[0], "configuration", "objective_accuracy.csv"),
              column(oa[0], "accuracy", "objective_accuracy.csv"), true, &fitted, kind));
  emit("ceiling_accuracy.dat", "Ceiling accuracy with error-free principle scores", "configuration", "accuracy",
       series(oa, column(oa[0], "configuration", "objective_accuracy.csv"),
              column(oa[0], "accuracy", "objective_accuracy.csv"), true, &ceiling, kind));

  const auto ab = parse_csv(read_text_file(eval / "ablation.csv"));
  emit("ablation_fitted.dat", "Accuracy vs number of principles (fitted PMs)", "k", "accuracy",
       series(ab, column(ab[0], "k", "ablation.csv"), column(ab[0], "accuracy", "ablation.csv"), false));
  emit("ablation_ceiling.dat", "Accuracy vs number of principles (ceiling)", "k", "accuracy",
       series(ab, column(ab[0], "k", "ablation.csv"), column(ab[0], "ceiling", "ablation.csv"), false));

  const auto wr = parse_csv(read_text_file(eval / "win_rates.csv"));
  for (const char* proto : {"without_tie", "with_tie"}) {
    const std::vector<std::string> keep{proto};
    emit(std::string("win_rates_") + proto + ".dat", std::string("Win rate vs single-objective baseline (") + proto + ")",
         "policy", "win_rate",
         series(wr, column(wr[0], "policy_x", "win_rates.csv"), column(wr[0], "win_rate", "win_rates.csv"), true,
                &keep, column(wr[0], "protocol", "win_rates.csv")));
  }

  for (const auto& entry : fs::directory_iterator(out / "policies")) {
    const std::string fname = entry.path().filename().string();
    const std::string suffix = "_curve.csv";
    if (fname.size() <= suffix.size() || fname.compare(fname.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    const std::string name = fname.substr(0, fname.size() - suffix.size());
    const auto lc = parse_csv(read_text_file(entry.path()));
    emit("learning_curve_" + name + ".dat", "Learning curve: " + name, "iteration", "expected_reward",
         series(lc, column(lc[0], "iteration", fname), column(lc[0], "expected_reward", fname), false));
  }
  // directory_iterator order is unspecified; keep the index stable.
  std::vector<ordered_json> items(index.begin(), index.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const ordered_json& x, const ordered_json& y) { return x["file"] < y["file"]; });
  write_json_file(out / "report" / "index.json", ordered_json(items));
}

}  // namespace morlaif
