#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <unistd.h>

#include <boost/math/distributions/normal.hpp>

#include "pemb/thurstone.hpp"

namespace pemb::thurstone {
namespace {

double boost_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

std::vector<ComparisonRecord> repeat(std::size_t i, std::size_t j, double si, double sj, std::size_t n) {
  return std::vector<ComparisonRecord>(n, {i, j, si, sj});
}

std::vector<ComparisonRecord> random_records(std::size_t n, std::size_t n_o, Rng& rng) {
  std::vector<ComparisonRecord> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = 0; k < n_o; ++k) {
        const double u = uniform01(rng);
        const double si = u < 0.1 ? 0.5 : u < 0.55 ? 1.0 : 0.0;
        // orientation of the record is arbitrary
        if (uniform01(rng) < 0.5)
          out.push_back({i, j, si, 1 - si});
        else
          out.push_back({j, i, 1 - si, si});
      }
  return out;
}

TEST(Tally, UnanimousPreference) {
  const auto t = tally(repeat(0, 1, 1, 0, 10), 2);
  EXPECT_EQ(t.F[1][0], 10.0);
  EXPECT_EQ(t.F[0][1], 0.0);
  EXPECT_EQ(t.n_o, 10.0);
}

TEST(Tally, AllTiesAndMixedSplit) {
  const auto ties = tally(repeat(0, 1, 0.5, 0.5, 10), 2);
  EXPECT_EQ(ties.F[0][1], 5.0);
  EXPECT_EQ(ties.F[1][0], 5.0);
  auto rec = repeat(0, 1, 1, 0, 7);
  for (const auto& r : repeat(1, 0, 1, 0, 3)) rec.push_back(r);
  const auto mixed = tally(rec, 2);
  EXPECT_EQ(mixed.F[1][0], 7.0);
  EXPECT_EQ(mixed.F[0][1], 3.0);
}

TEST(Tally, Rejections) {
  auto rec = repeat(0, 1, 1, 0, 2);
  for (const auto& r : repeat(1, 2, 1, 0, 3)) rec.push_back(r);
  for (const auto& r : repeat(0, 2, 1, 0, 2)) rec.push_back(r);
  try {
    tally(rec, 3);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("pair (1,2)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(tally({{0, 0, 1, 0}}, 2), std::invalid_argument);
  EXPECT_THROW(tally({{0, 3, 1, 0}}, 2), std::invalid_argument);
  EXPECT_THROW(tally({{0, 1, 0.7, 0.3}}, 2), std::invalid_argument);
  EXPECT_THROW(tally({{0, 1, 1, 1}}, 2), std::invalid_argument);
  EXPECT_THROW(tally({}, 2), std::invalid_argument);
}

TEST(Percentage, Arithmetic) {
  const Matrix F = {{0, 1500}, {2100, 0}};
  const auto M = percentage(F, 3000);
  EXPECT_EQ(M[0][1], 0.5);
  EXPECT_EQ(M[1][0], 0.7);
  EXPECT_EQ(percentage({{0, 3000}, {0, 0}}, 3000)[0][1], 1.0);
  EXPECT_THROW(percentage(F, 0), std::invalid_argument);
}

TEST(Logistic, Values) {
  EXPECT_EQ(logistic({{0, 0.5}, {0.5, 0}}, 3000)[0][1], 0.0);
  EXPECT_NEAR(logistic({{0, 1}, {0, 0}}, 10, 0.5)[0][1], std::log(21.0), 1e-15);
  EXPECT_NEAR(logistic({{0, 1}, {0, 0}}, 10, 0.5)[1][0], -std::log(21.0), 1e-15);
  EXPECT_TRUE(std::isfinite(logistic({{0, 0}, {1, 0}}, 1e6)[0][1]));
  EXPECT_THROW(logistic({{0, 1}, {0, 0}}, 10, 0.0), std::invalid_argument);
}

TEST(NormalQuantile, AgreesWithBoost) {
  double worst = 0;
  for (double p = 1e-12; p < 1; p = p < 0.01 ? p * 3 : p + 0.001) {
    const double want = boost_quantile(p);
    worst = std::max(worst, std::abs(normal_quantile(p) - want) / std::max(1.0, std::abs(want)));
  }
  EXPECT_LT(worst, 2e-9);
  EXPECT_EQ(normal_quantile(0.5), 0.0);
  EXPECT_THROW(normal_quantile(0.0), std::domain_error);
  EXPECT_THROW(normal_quantile(1.0), std::domain_error);
  for (double x : {-3.0, -0.7, 0.0, 1.2, 4.0}) EXPECT_NEAR(normal_quantile(normal_cdf(x)), x, 1e-8);
}

TEST(FitLambda, ExactRegression) {
  // choose m, set g = z / 0.5 so z = 0.5 g exactly
  const Matrix M = {{0, 0.3, 0.8}, {0.7, 0, 0.55}, {0.2, 0.45, 0}};
  Matrix G = square(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) G[i][j] = normal_quantile(M[i][j]) / 0.5;
  EXPECT_NEAR(fit_lambda(G, M), 0.5, 1e-12);
}

TEST(FitLambda, SinglePairAgainstOracle) {
  const double n_o = 3000;
  const Matrix M = {{0, 0.3}, {0.7, 0}};
  const auto G = logistic(M, n_o);
  const double z = boost_quantile(0.7), g = std::log(2100.5 / 900.5);
  EXPECT_NEAR(z, 0.5244, 1e-4);
  EXPECT_NEAR(g, 0.84698, 1e-5);
  EXPECT_NEAR(fit_lambda(G, M), z / g, 1e-9);
  EXPECT_NEAR(fit_lambda(G, M), 0.61914, 1e-5);
}

TEST(FitLambda, DuplicationInvariantAndExclusions) {
  const Matrix M = {{0, 0.3, 1.0}, {0.7, 0, 0.6}, {0.0, 0.4, 0}};
  const auto G = logistic(M, 100);
  // entries at 0 or 1 are excluded: same fit as the matrix without them
  const double z1 = normal_quantile(0.3), z2 = normal_quantile(0.7), z3 = normal_quantile(0.6), z4 = normal_quantile(0.4);
  const double want = (z1 * G[0][1] + z2 * G[1][0] + z3 * G[1][2] + z4 * G[2][1]) /
                      (G[0][1] * G[0][1] + G[1][0] * G[1][0] + G[1][2] * G[1][2] + G[2][1] * G[2][1]);
  EXPECT_NEAR(fit_lambda(G, M), want, 1e-14);
  // duplicating every (z,g) pair: a block-diagonal copy
  Matrix MM = square(6), GG = square(6);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        MM[3 * b + i][3 * b + j] = M[i][j];
        GG[3 * b + i][3 * b + j] = G[i][j];
      }
  EXPECT_NEAR(fit_lambda(GG, MM), fit_lambda(G, M), 1e-14);
}

TEST(FitLambda, UndefinedCasesRejected) {
  const Matrix half = {{0, 0.5}, {0.5, 0}};
  EXPECT_THROW(fit_lambda(logistic(half, 10), half), std::domain_error);
  const Matrix unanimous = {{0, 1}, {0, 0}};
  EXPECT_THROW(fit_lambda(logistic(unanimous, 10), unanimous), std::domain_error);
}

TEST(Scores, HalfWidth) {
  EXPECT_NEAR(confidence_half_width(3000), 1.96 / std::sqrt(6000.0), 1e-16);
  EXPECT_EQ(std::round(confidence_half_width(3000) * 1e4) / 1e4, 0.0253);
  EXPECT_THROW(confidence_half_width(0), std::invalid_argument);
}

TEST(Scores, AllTiesGiveZero) {
  const auto r = evaluate(repeat(0, 1, 0.5, 0.5, 6), 2);
  EXPECT_FALSE(r.lambda.has_value());
  for (const auto& s : r.scores) EXPECT_EQ(s.z, 0.0);
}

TEST(Scores, UnanimousTwoMethods) {
  // method 1 always preferred; fit needs one interior proportion, so use lambda directly
  const auto t = tally(repeat(0, 1, 0, 1, 10), 2);
  const auto G = logistic(percentage(t.F, t.n_o), t.n_o);
  const auto r = scores(G, 0.6, t.n_o);
  EXPECT_GT(r.scores[1].z, 0.0);
  EXPECT_EQ(r.scores[1].z, -r.scores[0].z);
  EXPECT_NEAR(r.scores[1].z, 0.6 * std::log(21.0), 1e-12);
  EXPECT_THROW(scores(G, std::nan(""), 10), std::invalid_argument);
}

TEST(Properties, RandomTallies) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + uniform_index(rng, 5), n_o = 1 + uniform_index(rng, 40);
    const auto rec = random_records(n, n_o, rng);
    const auto t = tally(rec, n);
    ASSERT_EQ(t.n_o, static_cast<double>(n_o));
    const auto M = percentage(t.F, t.n_o);
    const auto G = logistic(M, t.n_o);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        EXPECT_EQ(t.F[i][j] + t.F[j][i], t.n_o);
        EXPECT_NEAR(M[i][j] + M[j][i], 1.0, 1e-15);
        EXPECT_GE(M[i][j], 0.0);
        EXPECT_LE(M[i][j], 1.0);
        EXPECT_NEAR(G[i][j], -G[j][i], 1e-12);
      }
    const auto r = scores(G, 0.5 + uniform01(rng), t.n_o);
    double sum = 0;
    for (const auto& s : r.scores) sum += s.z;
    EXPECT_NEAR(sum, 0.0, 1e-12);
  }
}

TEST(Properties, MonotoneInPreference) {
  Rng rng(40);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + uniform_index(rng, 3), n_o = 20;
    const auto t = tally(random_records(n, n_o, rng), n);
    auto M = percentage(t.F, t.n_o);
    const std::size_t i = uniform_index(rng, n), j = (i + 1 + uniform_index(rng, n - 1)) % n;
    const double before = scores(logistic(M, t.n_o), 0.6, t.n_o).scores[j].z;
    const double step = std::min(1.0 - M[i][j], 0.25);
    M[i][j] += step;
    M[j][i] -= step;
    EXPECT_GE(scores(logistic(M, t.n_o), 0.6, t.n_o).scores[j].z, before);
  }
}

TEST(Simulate, PairCountAndDeterminism) {
  EXPECT_EQ(comparison_count(5, 100), 1000u);
  const auto a = simulate_judgments({0, 0.1, 0.2, 0.3, 0.4}, 100, 7);
  EXPECT_EQ(a.size(), comparison_count(5, 100));
  const auto b = simulate_judgments({0, 0.1, 0.2, 0.3, 0.4}, 100, 7);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].score_i, b[k].score_i);
  EXPECT_THROW(simulate_judgments({0, 1}, 0, 1), std::invalid_argument);
}

TEST(Simulate, EqualScalesGiveHalf) {
  const auto t = tally(simulate_judgments({0.2, 0.2}, 20000, 3), 2);
  EXPECT_NEAR(t.F[0][1] / t.n_o, 0.5, 0.015);
}

TEST(Simulate, RecoversOrdering) {
  const std::vector<double> truth = {0.0, 0.3, 0.6};
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = evaluate(simulate_judgments(truth, 10000, seed), 3);
    ASSERT_TRUE(r.lambda.has_value());
    EXPECT_LT(r.scores[0].z, r.scores[1].z) << "seed " << seed;
    EXPECT_LT(r.scores[1].z, r.scores[2].z) << "seed " << seed;
  }
}

TEST(Files, CsvRoundTripAndReport) {
  const auto dir = std::filesystem::temp_directory_path() / ("pemb-thurstone-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto path = (dir / "comparisons.csv").string();
  const auto rec = simulate_judgments({0, 0.5, 1}, 50, 2);
  write_comparisons_csv(path, rec);
  std::size_t n = 0;
  const auto back = read_comparisons_csv(path, &n);
  EXPECT_EQ(n, 3u);
  ASSERT_EQ(back.size(), rec.size());
  for (std::size_t k = 0; k < rec.size(); ++k) {
    EXPECT_EQ(back[k].method_i, rec[k].method_i);
    EXPECT_EQ(back[k].score_j, rec[k].score_j);
  }
  const auto j = report_to_json(evaluate(back, n), true);
  EXPECT_EQ(j.at("schema_version"), kReportSchema);
  EXPECT_EQ(j.at("scores").size(), 3u);
  EXPECT_TRUE(j.contains("matrices"));
  const double z = j["scores"][1]["z"], hw = j["half_width"];
  EXPECT_DOUBLE_EQ(j["scores"][1]["ci"][1].get<double>(), z + hw);

  std::ofstream(dir / "bad.csv") << "method_i,method_j,score_i,score_j\n0,-1,1,0\n";
  EXPECT_THROW(read_comparisons_csv((dir / "bad.csv").string()), std::invalid_argument);
  std::ofstream(dir / "nohdr.csv") << "0,1,1,0\n";
  EXPECT_THROW(read_comparisons_csv((dir / "nohdr.csv").string()), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace pemb::thurstone
