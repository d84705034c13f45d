#include "morlaif/preference_model.hpp"

#include <cmath>
#include <exception>
#include <future>
#include <limits>
#include <string>

#include "morlaif/errors.hpp"
#include "morlaif/json_util.hpp"
#include "morlaif/random.hpp"

namespace morlaif {
namespace {

struct IndexedPair {
  int prompt;
  int a;
  int b;
  std::optional<Label> label;
};

int ref_index(const Ref& r, const char* what) {
  if (const int* i = std::get_if<int>(&r)) return *i;
  throw ValidationError(std::string("preference_model: ") + what +
                        " must be an index into the synthetic space, got text");
}

IndexedPair indexed(const ComparisonRecord& record, const ResponseSpace& space) {
  const ComparisonRecord c = canonical(record);
  IndexedPair p{ref_index(c.prompt_ref, "prompt_ref"), ref_index(c.response_a, "response_a"),
                ref_index(c.response_b, "response_b"), c.label};
  space.check_index(p.prompt, p.a);
  space.check_index(p.prompt, p.b);
  return p;
}

double soft_target(Label l) { return l == Label::kA ? 1.0 : l == Label::kB ? 0.0 : 0.5; }

Eigen::MatrixXd mapped_features(const ResponseSpace& space, const FeatureMap& features) {
  return features.apply(space.features);
}

// Design matrix of score-table differences for labeled records.
LogisticProblem table_problem(const Eigen::Ref<const Eigen::MatrixXd>& table,
                              std::span<const ComparisonRecord> records, const ResponseSpace& space,
                              double l2) {
  std::vector<IndexedPair> usable;
  for (const auto& r : records) {
    IndexedPair p = indexed(r, space);
    if (p.label) usable.push_back(p);
  }
  LogisticProblem prob;
  prob.l2 = l2;
  prob.x.resize(static_cast<Eigen::Index>(usable.size()), table.cols());
  prob.y.resize(static_cast<Eigen::Index>(usable.size()));
  for (size_t i = 0; i < usable.size(); ++i) {
    const auto& p = usable[i];
    const auto row = static_cast<Eigen::Index>(i);
    prob.x.row(row) = table.row(space.row(p.prompt, p.a)) - table.row(space.row(p.prompt, p.b));
    prob.y(row) = soft_target(*p.label);
  }
  return prob;
}

void require_overall(std::span<const ComparisonRecord> records, const char* op) {
  for (const auto& r : records)
    if (!r.target.is_overall())
      throw ValidationError(std::string(op) + ": records must target OVERALL");
}

nlohmann::ordered_json target_to_json(const Target& t) {
  if (t.is_overall()) return "OVERALL";
  return *t.principle;
}

Target target_from_json(const nlohmann::json& j) {
  if (j.is_string() && j.get<std::string>() == "OVERALL") return Target::overall();
  if (j.is_number_integer()) return Target::of(j.get<int>());
  throw ValidationError("preference model: bad target");
}

}  // namespace

std::string_view to_string(FeatureMap::Kind kind) {
  switch (kind) {
    case FeatureMap::Kind::kIdentity:
      return "identity";
    case FeatureMap::Kind::kProjection:
      return "projection";
    case FeatureMap::Kind::kRandomLift:
      return "random_lift";
  }
  return "unknown";
}

FeatureMap FeatureMap::projection(int input_dim, int output_dim, std::uint64_t seed) {
  if (input_dim < 1 || output_dim < 1) throw ValidationError("feature map: dimensions must be positive");
  Rng rng = make_rng(seed, {kProjectionStream});
  FeatureMap f;
  f.kind = Kind::kProjection;
  f.matrix.resize(input_dim, output_dim);
  for (int j = 0; j < output_dim; ++j)
    for (int i = 0; i < input_dim; ++i) f.matrix(i, j) = standard_normal(rng);
  f.matrix /= std::sqrt(static_cast<double>(output_dim));
  return f;
}

FeatureMap FeatureMap::random_lift(int input_dim, int width, std::uint64_t seed) {
  if (input_dim < 1 || width < 1) throw ValidationError("feature map: dimensions must be positive");
  Rng rng = make_rng(seed, {kProjectionStream, 1});
  FeatureMap f;
  f.kind = Kind::kRandomLift;
  f.matrix.resize(input_dim, width);
  for (int j = 0; j < width; ++j)
    for (int i = 0; i < input_dim; ++i) f.matrix(i, j) = standard_normal(rng) / std::sqrt(input_dim);
  f.offset.resize(width);
  for (int j = 0; j < width; ++j) f.offset(j) = standard_normal(rng);
  return f;
}

Eigen::MatrixXd FeatureMap::apply(const Eigen::Ref<const Eigen::MatrixXd>& phi) const {
  switch (kind) {
    case Kind::kIdentity:
      return phi;
    case Kind::kProjection:
      if (phi.cols() != matrix.rows()) throw ValidationError("feature map: input dimension mismatch");
      return phi * matrix;
    case Kind::kRandomLift: {
      if (phi.cols() != matrix.rows()) throw ValidationError("feature map: input dimension mismatch");
      Eigen::MatrixXd z = phi * matrix;
      z.rowwise() += offset;
      return z.array().tanh();
    }
  }
  return phi;
}

int FeatureMap::output_dim(int input_dim) const {
  return kind == Kind::kIdentity ? input_dim : static_cast<int>(matrix.cols());
}

LogisticProblem make_pm_problem(std::span<const ComparisonRecord> records, const ResponseSpace& space,
                                const FeatureMap& features, double l2) {
  return table_problem(mapped_features(space, features), records, space, l2);
}

PreferenceModel fit_pm(std::span<const ComparisonRecord> records, const ResponseSpace& space,
                       const FitConfig& config, const FeatureMap& features) {
  if (records.empty()) throw ValidationError("fit_pm: empty dataset");
  if (config.l2 < 0.0) throw ValidationError("fit_pm: negative regularization");
  const Target target = records.front().target;
  for (const auto& r : records)
    if (!(r.target == target)) throw ValidationError("fit_pm: records mix several targets");

  const LogisticProblem prob = make_pm_problem(records, space, features, config.l2);
  if (prob.x.rows() < 2) throw ValidationError("fit_pm: need at least two labeled records");
  const bool has_a = (prob.y.array() > 0.5).any();
  const bool has_b = (prob.y.array() < 0.5).any();
  if (config.l2 == 0.0 && !(has_a && has_b))
    throw ValidationError("fit_pm: both labels must occur when regularization is zero");

  const LogisticSolution sol = solve_logistic(prob, config.gradient_tolerance, config.max_iterations);
  PreferenceModel pm;
  pm.target = target;
  pm.theta_hat = sol.w;
  pm.features = features;
  pm.fit_meta = {sol.iterations, sol.loss, sol.gradient_norm, config.l2, static_cast<int>(prob.x.rows())};
  return pm;
}

std::vector<PreferenceModel> fit_pms(const std::vector<std::vector<ComparisonRecord>>& datasets,
                                     const ResponseSpace& space, const FitConfig& config,
                                     const FeatureMap& features) {
  std::vector<std::future<PreferenceModel>> jobs;
  jobs.reserve(datasets.size());
  for (const auto& d : datasets)
    jobs.push_back(std::async(std::launch::async, [&d, &space, &config, &features] {
      return fit_pm(d, space, config, features);
    }));
  std::vector<PreferenceModel> out;
  out.reserve(datasets.size());
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

void calibrate(PreferenceModel& pm, std::span<const ComparisonRecord> records, const ResponseSpace& space) {
  if (records.empty()) throw ValidationError("calibrate: empty calibration split");
  const Eigen::VectorXd all = score_all(pm, space, false);
  std::vector<double> s;
  s.reserve(records.size() * 2);
  for (const auto& r : records) {
    const IndexedPair p = indexed(r, space);
    s.push_back(all(space.row(p.prompt, p.a)));
    s.push_back(all(space.row(p.prompt, p.b)));
  }
  const Eigen::Map<const Eigen::VectorXd> v(s.data(), static_cast<Eigen::Index>(s.size()));
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().mean());
  if (!(sd > 0.0)) throw ValidationError("calibrate: constant scorer (zero std) on the calibration split");
  pm.calibration = Calibration{mean, sd};
}

Eigen::VectorXd score_all(const PreferenceModel& pm, const ResponseSpace& space, bool standardized) {
  if (standardized && !pm.calibration) throw ValidationError("score: model is not calibrated");
  Eigen::VectorXd s = mapped_features(space, pm.features) * pm.theta_hat;
  s.array() += pm.bias;
  if (standardized) s = (s.array() - pm.calibration->mean) / pm.calibration->std;
  return s;
}

double score(const PreferenceModel& pm, const ResponseSpace& space, int prompt, int response,
             bool standardized) {
  space.check_index(prompt, response);
  if (standardized && !pm.calibration) throw ValidationError("score: model is not calibrated");
  const Eigen::MatrixXd f = pm.features.apply(space.phi(prompt, response));
  const double raw = f.row(0).dot(pm.theta_hat) + pm.bias;
  return standardized ? (raw - pm.calibration->mean) / pm.calibration->std : raw;
}

Eigen::MatrixXd score_table(std::span<const PreferenceModel> pms, const ResponseSpace& space,
                            bool standardized) {
  Eigen::MatrixXd t(space.features.rows(), static_cast<Eigen::Index>(pms.size()));
  for (size_t i = 0; i < pms.size(); ++i)
    t.col(static_cast<Eigen::Index>(i)) = score_all(pms[i], space, standardized);
  return t;
}

Eigen::MatrixXd latent_score_table(const World& world, const ResponseSpace& space) {
  return space.features * world.theta.transpose();
}

double table_accuracy(const Eigen::Ref<const Eigen::VectorXd>& values,
                      std::span<const ComparisonRecord> records, const ResponseSpace& space) {
  if (values.size() != space.features.rows())
    throw ValidationError("accuracy: score vector does not cover the response space");
  double hits = 0.0;
  int counted = 0;
  for (const auto& r : records) {
    const IndexedPair p = indexed(r, space);
    if (!p.label || *p.label == Label::kTie) continue;
    const double sa = values(space.row(p.prompt, p.a));
    const double sb = values(space.row(p.prompt, p.b));
    ++counted;
    if (sa == sb)
      hits += 0.5;
    else if ((sa > sb) == (*p.label == Label::kA))
      hits += 1.0;
  }
  if (counted == 0) throw ValidationError("accuracy: empty test set");
  return hits / counted;
}

double pm_accuracy(const PreferenceModel& pm, std::span<const ComparisonRecord> records,
                   const ResponseSpace& space) {
  for (const auto& r : records)
    if (!(r.target == pm.target) && !r.target.is_overall())
      throw ValidationError("pm_accuracy: records target a different principle");
  return table_accuracy(score_all(pm, space, false), records, space);
}

LinearWeights fit_linear_weights_on_table(const Eigen::Ref<const Eigen::MatrixXd>& table,
                                          std::span<const ComparisonRecord> records,
                                          std::span<const ComparisonRecord> held_out,
                                          const ResponseSpace& space, const FitConfig& config) {
  require_overall(records, "fit_linear_weights");
  require_overall(held_out, "fit_linear_weights");
  const LogisticProblem prob = table_problem(table, records, space, config.l2);
  if (prob.x.rows() < 1) throw ValidationError("fit_linear_weights: no labeled records");
  const LogisticSolution sol = solve_logistic(prob, config.gradient_tolerance, config.max_iterations);
  if (!sol.w.allFinite()) throw ConvergenceError("fit_linear_weights: non-finite weights");
  LinearWeights out;
  out.w = sol.w;
  out.l2 = config.l2;
  out.n_fit = static_cast<int>(prob.x.rows());
  out.held_out_accuracy = std::numeric_limits<double>::quiet_NaN();
  if (!held_out.empty()) {
    out.held_out_accuracy = table_accuracy(table * out.w, held_out, space);
    for (const auto& r : held_out)
      if (r.label && *r.label != Label::kTie) ++out.n_held_out;
  }
  return out;
}

LinearWeights fit_linear_weights(std::span<const PreferenceModel> pms,
                                 std::span<const ComparisonRecord> records,
                                 std::span<const ComparisonRecord> held_out, const ResponseSpace& space,
                                 const FitConfig& config) {
  if (pms.empty()) throw ValidationError("fit_linear_weights: no preference models");
  return fit_linear_weights_on_table(score_table(pms, space, true), records, held_out, space, config);
}

double multiobjective_accuracy(std::span<const PreferenceModel> pms, const CheckedSpec& spec,
                               std::span<const ComparisonRecord> records, const ResponseSpace& space) {
  require_overall(records, "multiobjective_accuracy");
  if (static_cast<Eigen::Index>(pms.size()) != spec.principle_count())
    throw ValidationError("multiobjective_accuracy: spec validated for a different principle count");
  return table_accuracy(scalarize_rows(spec, score_table(pms, space, true)), records, space);
}

double ceiling_accuracy(const World& world, const ResponseSpace& space, const CheckedSpec& spec,
                        std::span<const ComparisonRecord> records) {
  require_overall(records, "ceiling_accuracy");
  return table_accuracy(scalarize_rows(spec, latent_score_table(world, space)), records, space);
}

std::vector<PreferenceModel> fit_bootstrap_ensemble(std::span<const ComparisonRecord> records,
                                                    const ResponseSpace& space, const FitConfig& config,
                                                    int n_models, std::uint64_t seed,
                                                    const FeatureMap& features) {
  if (n_models < 1) throw ValidationError("bootstrap ensemble: need at least one model");
  if (records.empty()) throw ValidationError("bootstrap ensemble: empty dataset");
  std::vector<std::vector<ComparisonRecord>> resamples(static_cast<size_t>(n_models));
  const int m = static_cast<int>(records.size());
  for (int k = 0; k < n_models; ++k) {
    Rng rng = make_rng(seed, {kBootstrapStream, static_cast<std::uint64_t>(k)});
    resamples[static_cast<size_t>(k)].reserve(records.size());
    for (int i = 0; i < m; ++i) resamples[static_cast<size_t>(k)].push_back(records[uniform_index(rng, m)]);
  }
  return fit_pms(resamples, space, config, features);
}

nlohmann::ordered_json to_json(const PreferenceModel& pm) {
  nlohmann::ordered_json j;
  j["target"] = target_to_json(pm.target);
  j["theta_hat"] = vector_to_json(pm.theta_hat);
  j["bias"] = pm.bias;
  if (pm.calibration)
    j["calibration"] = {{"mean", pm.calibration->mean}, {"std", pm.calibration->std}};
  else
    j["calibration"] = nullptr;
  j["fit_meta"] = {{"iterations", pm.fit_meta.iterations},
                   {"final_loss", pm.fit_meta.final_loss},
                   {"gradient_norm", pm.fit_meta.gradient_norm},
                   {"l2", pm.fit_meta.l2},
                   {"n_records", pm.fit_meta.n_records}};
  nlohmann::ordered_json f;
  f["kind"] = to_string(pm.features.kind);
  if (pm.features.kind != FeatureMap::Kind::kIdentity) f["matrix"] = matrix_to_json(pm.features.matrix);
  if (pm.features.kind == FeatureMap::Kind::kRandomLift)
    f["offset"] = vector_to_json(pm.features.offset.transpose());
  j["feature_map"] = f;
  return j;
}

PreferenceModel preference_model_from_json(const nlohmann::json& j) {
  try {
    PreferenceModel pm;
    pm.target = target_from_json(j.at("target"));
    pm.theta_hat = vector_from_json(j.at("theta_hat"));
    pm.bias = j.at("bias").get<double>();
    if (!j.at("calibration").is_null())
      pm.calibration = Calibration{j["calibration"].at("mean").get<double>(),
                                   j["calibration"].at("std").get<double>()};
    const auto& m = j.at("fit_meta");
    pm.fit_meta = {m.at("iterations").get<int>(), m.at("final_loss").get<double>(),
                   m.at("gradient_norm").get<double>(), m.at("l2").get<double>(),
                   m.at("n_records").get<int>()};
    const auto& f = j.at("feature_map");
    const std::string kind = f.at("kind").get<std::string>();
    if (kind == "projection") {
      pm.features.kind = FeatureMap::Kind::kProjection;
      pm.features.matrix = matrix_from_json(f.at("matrix"));
    } else if (kind == "random_lift") {
      pm.features.kind = FeatureMap::Kind::kRandomLift;
      pm.features.matrix = matrix_from_json(f.at("matrix"));
      pm.features.offset = vector_from_json(f.at("offset")).transpose();
    } else if (kind != "identity") {
      throw ValidationError("preference model: unknown feature map '" + kind + "'");
    }
    return pm;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("preference model: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const LinearWeights& w) {
  nlohmann::ordered_json j;
  j["w"] = vector_to_json(w.w);
  j["l2"] = w.l2;
  j["held_out_accuracy"] = std::isnan(w.held_out_accuracy) ? nlohmann::ordered_json(nullptr)
                                                           : nlohmann::ordered_json(w.held_out_accuracy);
  j["n_fit"] = w.n_fit;
  j["n_held_out"] = w.n_held_out;
  return j;
}

LinearWeights linear_weights_from_json(const nlohmann::json& j) {
  try {
    LinearWeights w;
    w.w = vector_from_json(j.at("w"));
    w.l2 = j.at("l2").get<double>();
    w.held_out_accuracy = j.at("held_out_accuracy").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                              : j["held_out_accuracy"].get<double>();
    w.n_fit = j.at("n_fit").get<int>();
    w.n_held_out = j.at("n_held_out").get<int>();
    if (!w.w.allFinite()) throw ValidationError("linear weights: non-finite entries");
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("linear weights: ") + e.what());
  }
}

}  // namespace morlaif
