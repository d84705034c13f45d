#include "morlaif/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "morlaif/errors.hpp"
#include "morlaif/json_util.hpp"
#include "morlaif/random.hpp"
#include "morlaif/scalarization.hpp"

namespace morlaif {
namespace {

enum TrialStream : std::uint64_t { kSlot0 = 0, kSlot1 = 1, kPromptDraw = 2, kJudgeDraw = 3 };

struct Trial {
  int prompt;
  int slot0;
  int slot1;
};

Trial draw_trial(const Policy& first, const Policy& second, const ResponseSpace& space, std::uint64_t seed,
                 std::uint64_t t) {
  Rng prompt_rng = make_rng(seed, {kWinRateStream, t, kPromptDraw});
  Rng r0 = make_rng(seed, {kWinRateStream, t, kSlot0});
  Rng r1 = make_rng(seed, {kWinRateStream, t, kSlot1});
  Trial tr;
  tr.prompt = uniform_index(prompt_rng, space.n_prompts);
  tr.slot0 = sample_response(first, tr.prompt, r0).response;
  tr.slot1 = sample_response(second, tr.prompt, r1).response;
  return tr;
}

void check_policy(const Policy& p, const ResponseSpace& space) {
  if (p.n_prompts() != space.n_prompts || p.n_templates() != space.n_templates)
    throw ValidationError("evaluation: policy shape does not match the response space");
}

}  // namespace

std::string_view to_string(TieProtocol p) { return p == TieProtocol::kWithTie ? "with_tie" : "without_tie"; }

std::optional<TieProtocol> parse_tie_protocol(std::string_view s) {
  if (s == "with_tie") return TieProtocol::kWithTie;
  if (s == "without_tie") return TieProtocol::kWithoutTie;
  return std::nullopt;
}

WinRateResult win_rate(const Policy& x, const Policy& y, const World& world, const ResponseSpace& space,
                       const WinRateProtocol& protocol, int n, std::uint64_t seed, bool mirrored) {
  if (n < 1) throw ValidationError("win_rate: n must be >= 1");
  check_policy(x, space);
  check_policy(y, space);
  const Policy& first = mirrored ? y : x;
  const Policy& second = mirrored ? x : y;
  const JudgeProtocol judge = protocol.judge();
  WinRateResult r;
  r.protocol = protocol.ties;
  r.n = n;
  for (int t = 0; t < n; ++t) {
    const auto tt = static_cast<std::uint64_t>(t);
    const Trial tr = draw_trial(first, second, space, seed, tt);
    Rng judge_rng = make_rng(seed, {kWinRateStream, tt, kJudgeDraw});
    const ResponsePair pair{tt, tr.prompt, tr.slot0, tr.slot1};
    const ComparisonRecord rec = canonical(simulate_judge_label(world, space, pair, judge, judge_rng));
    const Label slot_winner = *rec.label;
    if (slot_winner == Label::kTie)
      ++r.ties;
    else if ((slot_winner == Label::kA) != mirrored)
      ++r.wins;
    else
      ++r.losses;
  }
  const double dn = static_cast<double>(n);
  r.win_rate = (static_cast<double>(r.wins) + 0.5 * static_cast<double>(r.ties)) / dn;
  r.tie_rate = static_cast<double>(r.ties) / dn;
  // Per-trial scores are 1, 1/2 or 0.
  const double second_moment = (static_cast<double>(r.wins) + 0.25 * static_cast<double>(r.ties)) / dn;
  const double var = std::max(second_moment - r.win_rate * r.win_rate, 0.0);
  r.ci95 = 1.959963984540054 * std::sqrt(var / dn);
  return r;
}

WinRateMatrix winrate_matrix(std::span<const Policy> policies, const World& world, const ResponseSpace& space,
                             const WinRateProtocol& protocol, int n, std::uint64_t seed) {
  const int m = static_cast<int>(policies.size());
  if (m < 2) throw ValidationError("winrate_matrix: need at least two policies");
  WinRateMatrix out;
  out.rate = Eigen::MatrixXd::Constant(m, m, 0.5);
  out.cells.assign(static_cast<size_t>(m), std::vector<WinRateResult>(static_cast<size_t>(m)));
  struct Job {
    int i, j;
    std::future<WinRateResult> fwd, back;
  };
  std::vector<Job> jobs;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      const std::uint64_t cell_seed =
          derive_seed(seed, {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)});
      const Policy& a = policies[static_cast<size_t>(i)];
      const Policy& b = policies[static_cast<size_t>(j)];
      jobs.push_back({i, j,
                      std::async(std::launch::async,
                                 [&, cell_seed] { return win_rate(a, b, world, space, protocol, n, cell_seed); }),
                      std::async(std::launch::async, [&, cell_seed] {
                        return win_rate(b, a, world, space, protocol, n, cell_seed, true);
                      })});
    }
  for (auto& job : jobs) {
    const WinRateResult f = job.fwd.get();
    const WinRateResult b = job.back.get();
    if (f.wins != b.losses || f.losses != b.wins || f.ties != b.ties)
      throw RuntimeFailure("winrate_matrix: mirrored evaluation is inconsistent");
    out.cells[static_cast<size_t>(job.i)][static_cast<size_t>(job.j)] = f;
    out.cells[static_cast<size_t>(job.j)][static_cast<size_t>(job.i)] = b;
    out.rate(job.i, job.j) = f.win_rate;
    out.rate(job.j, job.i) = b.win_rate;
  }
  return out;
}

double calibrate_tie_band(const Policy& x, const Policy& y, const World& world, const ResponseSpace& space,
                          double target_rate, int n, std::uint64_t seed) {
  if (!(target_rate >= 0.0 && target_rate < 1.0)) throw ValidationError("tie band: target rate must lie in [0, 1)");
  if (n < 1) throw ValidationError("tie band: n must be >= 1");
  check_policy(x, space);
  check_policy(y, space);
  if (target_rate == 0.0) return 0.0;
  std::vector<double> gaps;
  gaps.reserve(static_cast<size_t>(n));
  for (int t = 0; t < n; ++t) {
    const Trial tr = draw_trial(x, y, space, seed, static_cast<std::uint64_t>(t));
    gaps.push_back(std::abs(true_utility(world, space, tr.prompt, tr.slot0) -
                            true_utility(world, space, tr.prompt, tr.slot1)));
  }
  std::sort(gaps.begin(), gaps.end());
  // Smallest band with at least target_rate of the gaps strictly inside.
  const auto k = static_cast<size_t>(std::ceil(target_rate * n - 1e-9));
  if (k == 0) return 0.0;
  const double edge = gaps[k - 1];
  // Identical responses give exact zero gaps; a band just above a repeated
  // value admits all of them, so the realized rate can exceed the target.
  if (k < gaps.size() && gaps[k] > edge) return 0.5 * (edge + gaps[k]);
  return std::nextafter(edge, std::numeric_limits<double>::infinity());
}

Eigen::MatrixXd label_matrix(const std::vector<std::vector<ComparisonRecord>>& per_principle) {
  if (per_principle.empty() || per_principle.front().empty())
    throw ValidationError("label_matrix: no labels");
  const auto& first = per_principle.front();
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (size_t r = 0; r < first.size(); ++r) row_of[first[r].pair_id] = static_cast<Eigen::Index>(r);
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(first.size()),
                                                static_cast<Eigen::Index>(per_principle.size()),
                                                std::numeric_limits<double>::quiet_NaN());
  for (size_t c = 0; c < per_principle.size(); ++c) {
    if (per_principle[c].size() != first.size())
      throw ValidationError("label_matrix: every principle must label the same pairs");
    for (const auto& rec : per_principle[c]) {
      const auto it = row_of.find(rec.pair_id);
      if (it == row_of.end()) throw ValidationError("label_matrix: unknown pair " + rec.pair_id);
      const ComparisonRecord can = canonical(rec);
      if (!can.label || *can.label == Label::kTie)
        throw ValidationError("label_matrix: pair " + rec.pair_id + " lacks a binary label");
      m(it->second, static_cast<Eigen::Index>(c)) = *can.label == Label::kA ? 1.0 : 0.0;
    }
  }
  if (m.hasNaN()) throw ValidationError("label_matrix: duplicate pair ids");
  return m;
}

Eigen::MatrixXd principle_correlations(const Eigen::Ref<const Eigen::MatrixXd>& labels) {
  const Eigen::Index n = labels.cols();
  if (labels.rows() < 2) throw ValidationError("principle_correlations: need at least two pairs");
  const Eigen::MatrixXd centered = labels.rowwise() - labels.colwise().mean();
  const Eigen::VectorXd norms = centered.colwise().norm();
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (norms(i) == 0.0 || norms(j) == 0.0)
        c(i, j) = std::numeric_limits<double>::quiet_NaN();
      else if (i == j)
        c(i, j) = 1.0;
      else
        c(i, j) = std::clamp(centered.col(i).dot(centered.col(j)) / (norms(i) * norms(j)), -1.0, 1.0);
    }
  return c;
}

std::vector<int> ascending_weight_order(const Eigen::Ref<const Eigen::VectorXd>& w) {
  std::vector<int> order(static_cast<size_t>(w.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return w(a) < w(b); });
  return order;
}

std::vector<AblationPoint> ablation_curve(std::span<const PreferenceModel> pms, const World& world,
                                          const ResponseSpace& space,
                                          std::span<const ComparisonRecord> weight_records,
                                          std::span<const ComparisonRecord> test_records,
                                          std::span<const int> order, const FitConfig& config) {
  const int n = static_cast<int>(pms.size());
  if (n < 1) throw ValidationError("ablation_curve: empty survivor set");
  if (static_cast<int>(order.size()) != n || world.n_principles != n)
    throw ValidationError("ablation_curve: order must be a permutation of the principles");
  std::vector<int> seen(order.begin(), order.end());
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < n; ++i)
    if (seen[static_cast<size_t>(i)] != i) throw ValidationError("ablation_curve: order is not a permutation");

  const Eigen::MatrixXd fitted = score_table(pms, space, true);
  const Eigen::MatrixXd latent = latent_score_table(world, space);
  std::vector<AblationPoint> curve;
  for (int k = n; k >= 1; --k) {
    AblationPoint pt;
    pt.k = k;
    pt.kept.assign(order.begin() + (n - k), order.end());
    Eigen::MatrixXd f(fitted.rows(), k), g(latent.rows(), k);
    for (int c = 0; c < k; ++c) {
      f.col(c) = fitted.col(pt.kept[static_cast<size_t>(c)]);
      g.col(c) = latent.col(pt.kept[static_cast<size_t>(c)]);
    }
    const LinearWeights wf = fit_linear_weights_on_table(f, weight_records, {}, space, config);
    const LinearWeights wg = fit_linear_weights_on_table(g, weight_records, {}, space, config);
    pt.accuracy = table_accuracy(f * wf.w, test_records, space);
    pt.ceiling = table_accuracy(g * wg.w, test_records, space);
    curve.push_back(std::move(pt));
  }
  return curve;
}

std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string matrix_csv(const std::vector<std::string>& names, const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (static_cast<Eigen::Index>(names.size()) != m.rows() || m.rows() != m.cols())
    throw ValidationError("matrix_csv: names must label a square matrix");
  std::string s = "name";
  for (const auto& n : names) s += "," + csv_escape(n);
  s += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    s += csv_escape(names[static_cast<size_t>(i)]);
    for (Eigen::Index j = 0; j < m.cols(); ++j) s += "," + (std::isnan(m(i, j)) ? std::string() : format_double(m(i, j)));
    s += "\n";
  }
  return s;
}

std::string win_rate_csv_header() { return "policy_x,policy_y,protocol,n,wins,losses,ties,win_rate,tie_rate,ci95\n"; }

std::string win_rate_csv_row(std::string_view x, std::string_view y, const WinRateResult& r) {
  return csv_escape(x) + "," + csv_escape(y) + "," + std::string(to_string(r.protocol)) + "," + std::to_string(r.n) +
         "," + std::to_string(r.wins) + "," + std::to_string(r.losses) + "," + std::to_string(r.ties) + "," +
         format_double(r.win_rate) + "," + format_double(r.tie_rate) + "," + format_double(r.ci95) + "\n";
}

std::string ablation_csv(const std::vector<AblationPoint>& curve) {
  std::string s = "k,accuracy,ceiling,kept\n";
  for (const auto& p : curve) {
    std::string kept;
    for (size_t i = 0; i < p.kept.size(); ++i) kept += (i ? " " : "") + std::to_string(p.kept[i]);
    s += std::to_string(p.k) + "," + format_double(p.accuracy) + "," + format_double(p.ceiling) + "," + kept + "\n";
  }
  return s;
}

nlohmann::ordered_json to_json(const WinRateResult& r) {
  nlohmann::ordered_json j;
  j["protocol"] = to_string(r.protocol);
  j["n"] = r.n;
  j["wins"] = r.wins;
  j["losses"] = r.losses;
  j["ties"] = r.ties;
  j["win_rate"] = r.win_rate;
  j["tie_rate"] = r.tie_rate;
  j["ci95"] = r.ci95;
  return j;
}

}  // namespace morlaif
