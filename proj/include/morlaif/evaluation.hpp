#ifndef MORLAIF_EVALUATION_HPP_
#define MORLAIF_EVALUATION_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "morlaif/preference_data.hpp"
#include "morlaif/preference_model.hpp"
#include "morlaif/synthetic_env.hpp"

namespace morlaif {

enum class TieProtocol { kWithoutTie, kWithTie };
std::string_view to_string(TieProtocol p);
std::optional<TieProtocol> parse_tie_protocol(std::string_view s);

struct WinRateProtocol {
  TieProtocol ties = TieProtocol::kWithoutTie;
  double tie_band = 0.0;  // only used with ties

  JudgeProtocol judge() const { return {ties == TieProtocol::kWithTie, tie_band}; }
};

struct WinRateResult {
  long wins = 0;
  long losses = 0;
  long ties = 0;
  long n = 0;
  double win_rate = 0.0;  // (wins + ties / 2) / n
  double tie_rate = 0.0;
  double ci95 = 0.0;      // normal-approximation half-width
  TieProtocol protocol = TieProtocol::kWithoutTie;
};

// Trial t draws a prompt and one response per "slot" from streams derived
// from (seed, t); the judge sees slot 0 as candidate A before its own random
// display swap, which is undone before counting. Normally x fills slot 0;
// `mirrored` puts x in slot 1, so win_rate(y, x, .., mirrored = true) on the
// same seed counts exactly the losses of win_rate(x, y, ..) as wins.
WinRateResult win_rate(const Policy& x, const Policy& y, const World& world, const ResponseSpace& space,
                       const WinRateProtocol& protocol, int n, std::uint64_t seed, bool mirrored = false);

struct WinRateMatrix {
  Eigen::MatrixXd rate;                     // rate(i, j) = win rate of i over j; diagonal 0.5
  std::vector<std::vector<WinRateResult>> cells;  // empty on the diagonal
};

// Each unordered pair shares one seed, and the (j, i) cell is the mirrored
// evaluation of (i, j); cells run concurrently.
WinRateMatrix winrate_matrix(std::span<const Policy> policies, const World& world, const ResponseSpace& space,
                             const WinRateProtocol& protocol, int n, std::uint64_t seed);

// Tie band such that P(|u(A) - u(B)| < band) matches `target_rate` for
// comparisons of x against y (slot sampling as in win_rate).
double calibrate_tie_band(const Policy& x, const Policy& y, const World& world, const ResponseSpace& space,
                          double target_rate, int n, std::uint64_t seed);

// Binary canonical labels (A = 1, B = 0): rows are pairs, columns principles.
// Every pair must carry a non-TIE label under every principle.
Eigen::MatrixXd label_matrix(const std::vector<std::vector<ComparisonRecord>>& per_principle);

// Pearson correlation of label columns; entries involving a constant column
// are NaN (missing), never 0.
Eigen::MatrixXd principle_correlations(const Eigen::Ref<const Eigen::MatrixXd>& labels);

struct AblationPoint {
  int k = 0;
  std::vector<int> kept;  // principle indices, in the order given
  double accuracy = 0.0;  // fitted PMs, refitted linear weights
  double ceiling = 0.0;   // latent scores, refitted oracle weights
};

// Ascending signed weight; ties keep the lower index first.
std::vector<int> ascending_weight_order(const Eigen::Ref<const Eigen::VectorXd>& w);

// For k = n down to 1 drops the first n - k entries of `order`, refits
// linear weights on the survivors and evaluates WeightedLinear accuracy on
// the test records, with the matching ceiling.
std::vector<AblationPoint> ablation_curve(std::span<const PreferenceModel> pms, const World& world,
                                          const ResponseSpace& space,
                                          std::span<const ComparisonRecord> weight_records,
                                          std::span<const ComparisonRecord> test_records,
                                          std::span<const int> order, const FitConfig& config);

// ---- tabular output ----------------------------------------------------------

std::string csv_escape(std::string_view s);
// Square matrix with row/column labels; NaN cells are left empty.
std::string matrix_csv(const std::vector<std::string>& names, const Eigen::Ref<const Eigen::MatrixXd>& m);
std::string win_rate_csv_header();
std::string win_rate_csv_row(std::string_view x, std::string_view y, const WinRateResult& r);
std::string ablation_csv(const std::vector<AblationPoint>& curve);
nlohmann::ordered_json to_json(const WinRateResult& r);

}  // namespace morlaif

#endif  // MORLAIF_EVALUATION_HPP_
