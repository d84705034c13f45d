#ifndef MORLAIF_PREFERENCE_MODEL_HPP_
#define MORLAIF_PREFERENCE_MODEL_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "morlaif/logistic.hpp"
#include "morlaif/preference_data.hpp"
#include "morlaif/scalarization.hpp"
#include "morlaif/synthetic_env.hpp"

namespace morlaif {

struct FitConfig {
  double l2 = 1e-3;
  int max_iterations = 100;
  double gradient_tolerance = 1e-6;
};

// Feature view a preference model sees. Identity by default; a fixed random
// projection gives a weaker model, a random tanh lift a misspecified one.
struct FeatureMap {
  enum class Kind { kIdentity, kProjection, kRandomLift };

  Kind kind = Kind::kIdentity;
  Eigen::MatrixXd matrix;  // d x d' (unused for identity)
  Eigen::RowVectorXd offset;

  static FeatureMap identity() { return {}; }
  // Gaussian d x d' matrix scaled by 1/sqrt(d').
  static FeatureMap projection(int input_dim, int output_dim, std::uint64_t seed);
  // tanh(phi W + b) with W ~ N(0, 1/d), b ~ N(0, 1).
  static FeatureMap random_lift(int input_dim, int width, std::uint64_t seed);

  Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& phi) const;
  int output_dim(int input_dim) const;
};

std::string_view to_string(FeatureMap::Kind kind);

struct Calibration {
  double mean = 0.0;
  double std = 1.0;
};

struct FitMeta {
  int iterations = 0;
  double final_loss = 0.0;
  double gradient_norm = 0.0;
  double l2 = 0.0;
  int n_records = 0;
};

// Linear Bradley-Terry scorer s(x) = theta_hat . f(phi(x)) + bias. Pairwise
// data cannot identify the bias, so fitting leaves it at zero.
struct PreferenceModel {
  Target target;
  Eigen::VectorXd theta_hat;
  double bias = 0.0;
  std::optional<Calibration> calibration;
  FitMeta fit_meta;
  FeatureMap features;
};

// Bradley-Terry design for records of one target in canonical orientation:
// rows f(phi(A)) - f(phi(B)), targets 1 (A), 0 (B), 0.5 (TIE). Unlabeled
// records are skipped.
LogisticProblem make_pm_problem(std::span<const ComparisonRecord> records, const ResponseSpace& space,
                                const FeatureMap& features, double l2);

// Throws ValidationError for fewer than two usable records, mixed targets,
// or single-class labels without regularization; ConvergenceError when the
// solver stalls.
PreferenceModel fit_pm(std::span<const ComparisonRecord> records, const ResponseSpace& space,
                       const FitConfig& config, const FeatureMap& features = FeatureMap::identity());

// Per-target fits, run concurrently. Each entry of `datasets` is one target.
std::vector<PreferenceModel> fit_pms(const std::vector<std::vector<ComparisonRecord>>& datasets,
                                     const ResponseSpace& space, const FitConfig& config,
                                     const FeatureMap& features = FeatureMap::identity());

// Mean and population std of raw scores over every response appearing in
// the calibration records. Throws ValidationError when the std is zero.
void calibrate(PreferenceModel& pm, std::span<const ComparisonRecord> records, const ResponseSpace& space);

double score(const PreferenceModel& pm, const ResponseSpace& space, int prompt, int response,
             bool standardized);
// Scores of every (prompt, template), indexed by ResponseSpace::row.
Eigen::VectorXd score_all(const PreferenceModel& pm, const ResponseSpace& space, bool standardized);
// One column per model.
Eigen::MatrixXd score_table(std::span<const PreferenceModel> pms, const ResponseSpace& space,
                            bool standardized);
// True latent principle scores g, one column per principle.
Eigen::MatrixXd latent_score_table(const World& world, const ResponseSpace& space);

// Fraction of labeled records whose canonical label agrees with the sign of
// values[A] - values[B]; equal values count 0.5 and TIE records are left out.
// `values` is indexed by ResponseSpace::row.
double table_accuracy(const Eigen::Ref<const Eigen::VectorXd>& values,
                      std::span<const ComparisonRecord> records, const ResponseSpace& space);

// Records must share the model's target or be OVERALL.
double pm_accuracy(const PreferenceModel& pm, std::span<const ComparisonRecord> records,
                   const ResponseSpace& space);

struct LinearWeights {
  Eigen::VectorXd w;
  double l2 = 0.0;
  double held_out_accuracy = 0.0;  // NaN without a held-out set
  int n_fit = 0;
  int n_held_out = 0;
};

// Logistic regression without intercept on standardized score differences
// [z_i(A) - z_i(B)]. All models must be calibrated and records OVERALL.
LinearWeights fit_linear_weights(std::span<const PreferenceModel> pms,
                                 std::span<const ComparisonRecord> records,
                                 std::span<const ComparisonRecord> held_out, const ResponseSpace& space,
                                 const FitConfig& config);

// Same regression on an arbitrary per-response score table (columns are
// principles), e.g. the latent g for the oracle ceiling.
LinearWeights fit_linear_weights_on_table(const Eigen::Ref<const Eigen::MatrixXd>& table,
                                          std::span<const ComparisonRecord> records,
                                          std::span<const ComparisonRecord> held_out,
                                          const ResponseSpace& space, const FitConfig& config);

// Predicts the candidate with the larger scalarized standardized score vector.
double multiobjective_accuracy(std::span<const PreferenceModel> pms, const CheckedSpec& spec,
                               std::span<const ComparisonRecord> records, const ResponseSpace& space);

// As multiobjective_accuracy with error-free principle scorers (latent g).
double ceiling_accuracy(const World& world, const ResponseSpace& space, const CheckedSpec& spec,
                        std::span<const ComparisonRecord> records);

// Bootstrap resamples of one dataset, one model per resample.
std::vector<PreferenceModel> fit_bootstrap_ensemble(std::span<const ComparisonRecord> records,
                                                    const ResponseSpace& space, const FitConfig& config,
                                                    int n_models, std::uint64_t seed,
                                                    const FeatureMap& features = FeatureMap::identity());

nlohmann::ordered_json to_json(const PreferenceModel& pm);
PreferenceModel preference_model_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const LinearWeights& w);
LinearWeights linear_weights_from_json(const nlohmann::json& j);

}  // namespace morlaif

#endif  // MORLAIF_PREFERENCE_MODEL_HPP_
