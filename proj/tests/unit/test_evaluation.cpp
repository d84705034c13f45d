#include <doctest.h>

#include <cmath>
#include <vector>

#include "morlaif/errors.hpp"
#include "morlaif/evaluation.hpp"
#include "morlaif/rl_trainer.hpp"
#include "test_util.hpp"

using namespace morlaif;
using morlaif::testing::small_world_config;

namespace {

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double n = static_cast<double>(a.size());
  const double ma = a.sum() / n, mb = b.sum() / n;
  double sab = 0, saa = 0, sbb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

struct Fixture {
  WorldAndSpace ws = make_world(small_world_config(3, 6, 12, 6), 21);
  Policy ref = make_reference_policy(ws.space, 0.5, 21);
  Policy best = exact_best_response_table(ws.space, latent_score_table(ws.world, ws.space) * ws.world.judge_weights);
};

}  // namespace

TEST_CASE("a policy against itself wins half the time") {
  Fixture f;
  const WinRateResult r = win_rate(f.ref, f.ref, f.ws.world, f.ws.space, {}, 20000, 3);
  CHECK(r.n == 20000);
  CHECK(r.ties == 0);
  CHECK(std::abs(r.win_rate - 0.5) < 2.0 * r.ci95);
  // Deterministic policy: every trial compares a response with itself.
  const WinRateProtocol tie{TieProtocol::kWithTie, 1e-9};
  const WinRateResult d = win_rate(f.best, f.best, f.ws.world, f.ws.space, tie, 500, 3);
  CHECK(d.ties == 500);
  CHECK(d.win_rate == 0.5);
  CHECK(d.tie_rate == 1.0);
}

TEST_CASE("the utility argmax policy beats the reference") {
  Fixture f;
  const WinRateResult r = win_rate(f.best, f.ref, f.ws.world, f.ws.space, {}, 5000, 4);
  CHECK(r.win_rate > 0.6);
  CHECK(r.wins + r.losses + r.ties == r.n);
  CHECK(r.ci95 == doctest::Approx(1.96 * std::sqrt(r.win_rate * (1 - r.win_rate) / r.n)));
}

TEST_CASE("mirrored evaluation swaps wins and losses exactly") {
  Fixture f;
  for (const WinRateProtocol& p : {WinRateProtocol{}, WinRateProtocol{TieProtocol::kWithTie, 0.3}}) {
    const WinRateResult xy = win_rate(f.best, f.ref, f.ws.world, f.ws.space, p, 3000, 9);
    const WinRateResult yx = win_rate(f.ref, f.best, f.ws.world, f.ws.space, p, 3000, 9, true);
    CHECK(yx.wins == xy.losses);
    CHECK(yx.losses == xy.wins);
    CHECK(yx.ties == xy.ties);
    CHECK(xy.win_rate + yx.win_rate == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("win-rate matrix is antisymmetric with a 0.5 diagonal") {
  Fixture f;
  const std::vector<Policy> ps{f.ref, f.best, uniform_policy(f.ws.space)};
  const WinRateMatrix m = winrate_matrix(ps, f.ws.world, f.ws.space, {}, 2000, 5);
  for (int i = 0; i < 3; ++i) {
    CHECK(m.rate(i, i) == 0.5);
    CHECK(m.cells[i][i].n == 0);
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      CHECK(m.cells[i][j].wins == m.cells[j][i].losses);
      CHECK(m.rate(i, j) + m.rate(j, i) == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  const WinRateMatrix again = winrate_matrix(ps, f.ws.world, f.ws.space, {}, 2000, 5);
  CHECK(again.rate == m.rate);
}

TEST_CASE("calibrated tie band hits the target tie rate") {
  Fixture f;
  const Policy u = uniform_policy(f.ws.space);
  const double band = calibrate_tie_band(f.ref, u, f.ws.world, f.ws.space, 0.2, 20000, 6);
  CHECK(band > 0.0);
  const WinRateResult r = win_rate(f.ref, u, f.ws.world, f.ws.space, {TieProtocol::kWithTie, band}, 20000, 7);
  CHECK(std::abs(r.tie_rate - 0.2) < 0.015);
}

TEST_CASE("identical responses above the target rate still all tie") {
  // The argmax policy often meets the reference on the same template, so
  // zero gaps alone exceed the target and the band hugs zero.
  Fixture f;
  const double band = calibrate_tie_band(f.ref, f.best, f.ws.world, f.ws.space, 0.05, 20000, 6);
  CHECK(band > 0.0);
  CHECK(band < 1e-300);
  const WinRateResult r =
      win_rate(f.ref, f.best, f.ws.world, f.ws.space, {TieProtocol::kWithTie, band}, 20000, 7);
  CHECK(r.tie_rate > 0.05);
}

TEST_CASE("principle correlations match Pearson and mark constant columns missing") {
  Rng rng(1);
  Eigen::MatrixXd labels(400, 4);
  for (int i = 0; i < 400; ++i) {
    labels(i, 0) = uniform01(rng) < 0.5;
    labels(i, 1) = uniform01(rng) < 0.7 ? labels(i, 0) : 1 - labels(i, 0);
    labels(i, 2) = labels(i, 0);
    labels(i, 3) = 1.0;
  }
  const Eigen::MatrixXd c = principle_correlations(labels);
  CHECK(c(0, 1) == doctest::Approx(pearson(labels.col(0), labels.col(1))).epsilon(1e-12));
  CHECK(c(0, 2) == doctest::Approx(1.0));
  CHECK(c(1, 0) == c(0, 1));
  CHECK(std::isnan(c(0, 3)));
  CHECK(std::isnan(c(3, 3)));
  CHECK(c(1, 1) == 1.0);
  const std::string csv = matrix_csv({"a", "b", "c", "d"}, c);
  CHECK(csv.find(",,") != std::string::npos);
  CHECK(csv.find("nan") == std::string::npos);
}

TEST_CASE("label matrix requires complete binary labels") {
  ComparisonRecord a;
  a.pair_id = "p1";
  a.label = Label::kA;
  ComparisonRecord a2 = a;
  a2.pair_id = "p2";
  ComparisonRecord b = a;
  b.label = Label::kB;
  b.position_swapped = true;  // canonical A
  const Eigen::MatrixXd m = label_matrix({{a, a2}, {b, a2}});
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == 1.0);
  ComparisonRecord t = a;
  t.label = Label::kTie;
  CHECK_THROWS_AS(label_matrix({{a}, {t}}), ValidationError);
  CHECK_THROWS_AS(label_matrix({{a, a2}, {a}}), ValidationError);
  CHECK_THROWS_AS(label_matrix({{a, a}}), ValidationError);
}

TEST_CASE("ascending weight order breaks ties by index") {
  Eigen::VectorXd w(5);
  w << 0.3, -0.2, 0.3, 0.0, -0.2;
  CHECK(ascending_weight_order(w) == std::vector<int>{1, 4, 3, 0, 2});
}

TEST_CASE("ablation at full size equals the fitted multi-objective accuracy") {
  WorldConfig c = small_world_config(6, 10, 30, 8);
  c.sycophancy_mode = true;
  const WorldAndSpace ws = make_world(c, 31);
  Rng rng(2);
  const Policy u = uniform_policy(ws.space);
  std::vector<std::vector<ComparisonRecord>> per(6);
  for (const auto& p : generate_pairs(ws.space, u, 3000, rng))
    for (int i = 0; i < 6; ++i) per[i].push_back(simulate_principle_label(ws.world, ws.space, p, i, rng));
  std::vector<PreferenceModel> pms = fit_pms(per, ws.space, FitConfig{});
  for (int i = 0; i < 6; ++i) calibrate(pms[i], per[i], ws.space);
  std::vector<ComparisonRecord> weight_set, test_set;
  for (const auto& p : generate_pairs(ws.space, u, 2000, rng))
    weight_set.push_back(simulate_judge_label(ws.world, ws.space, p, {}, rng));
  for (const auto& p : generate_pairs(ws.space, u, 2000, rng))
    test_set.push_back(simulate_judge_label(ws.world, ws.space, p, {}, rng));

  const LinearWeights lw = fit_linear_weights(pms, weight_set, {}, ws.space, FitConfig{});
  const std::vector<int> order = ascending_weight_order(lw.w);
  const auto curve = ablation_curve(pms, ws.world, ws.space, weight_set, test_set, order, FitConfig{});
  REQUIRE(curve.size() == 6);
  CHECK(curve[0].k == 6);
  CHECK(curve.back().k == 1);
  CHECK(curve.back().kept == std::vector<int>{order.back()});
  ScalarizationSpec spec;
  spec.weights = lw.w;
  CHECK(curve[0].accuracy ==
        doctest::Approx(multiobjective_accuracy(pms, validate_spec(spec, 6), test_set, ws.space)));
  for (const auto& pt : curve) {
    CHECK(static_cast<int>(pt.kept.size()) == pt.k);
    CHECK(pt.ceiling >= pt.accuracy - 0.03);
  }
  CHECK(ablation_csv(curve).rfind("k,", 0) == 0);
}

TEST_CASE("CSV escaping") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  for (auto p : {TieProtocol::kWithoutTie, TieProtocol::kWithTie}) CHECK(parse_tie_protocol(to_string(p)) == p);
}
