#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pemb/rng.hpp"

namespace pemb::thurstone {

using Matrix = std::vector<std::vector<double>>;

inline Matrix square(std::size_t n, double fill = 0.0) { return Matrix(n, std::vector<double>(n, fill)); }

/// One paired comparison; the two scores are (1,0), (0,1) or (0.5,0.5).
struct ComparisonRecord {
  std::size_t method_i = 0;
  std::size_t method_j = 0;
  double score_i = 0;
  double score_j = 0;
};

struct Tally {
  Matrix F;  // F[i][j]: score earned by j in comparisons against i
  double n_o = 0;
};

/// Diagonal entries are undefined and left at 0. Every unordered pair must be
/// observed the same number of times.
inline Tally tally(const std::vector<ComparisonRecord>& records, std::size_t n_methods) {
  if (n_methods < 2) throw std::invalid_argument("need at least two methods");
  Tally t{square(n_methods), 0};
  auto count = square(n_methods);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& c = records[r];
    const auto where = " (record " + std::to_string(r + 1) + ")";
    if (c.method_i >= n_methods || c.method_j >= n_methods) throw std::invalid_argument("method id out of range" + where);
    if (c.method_i == c.method_j) throw std::invalid_argument("self-comparison" + where);
    const bool valid = (c.score_i == 1 && c.score_j == 0) || (c.score_i == 0 && c.score_j == 1) ||
                       (c.score_i == 0.5 && c.score_j == 0.5);
    if (!valid) throw std::invalid_argument("scores must be (1,0), (0,1) or (0.5,0.5)" + where);
    t.F[c.method_i][c.method_j] += c.score_j;
    t.F[c.method_j][c.method_i] += c.score_i;
    count[std::min(c.method_i, c.method_j)][std::max(c.method_i, c.method_j)] += 1;
  }
  t.n_o = count[0][1];
  for (std::size_t i = 0; i < n_methods; ++i)
    for (std::size_t j = i + 1; j < n_methods; ++j)
      if (count[i][j] != t.n_o)
        throw std::invalid_argument("pair (" + std::to_string(i) + "," + std::to_string(j) + ") has " +
                                    std::to_string(static_cast<long long>(count[i][j])) + " observations, pair (0,1) has " +
                                    std::to_string(static_cast<long long>(t.n_o)));
  if (t.n_o == 0) throw std::invalid_argument("no observations");
  return t;
}

/// M = F / N_o.
inline Matrix percentage(const Matrix& F, double n_o) {
  if (!(n_o > 0)) throw std::invalid_argument("N_o must be positive");
  Matrix m = F;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) m[i][j] = i == j ? 0.0 : F[i][j] / n_o;
  return m;
}

/// g = ln((N_o m + tau) / (N_o (1 - m) + tau)).
inline Matrix logistic(const Matrix& M, double n_o, double tau = 0.5) {
  if (!(tau > 0)) throw std::invalid_argument("tau must be positive");
  Matrix g = square(M.size());
  for (std::size_t i = 0; i < M.size(); ++i)
    for (std::size_t j = 0; j < M.size(); ++j)
      if (i != j) g[i][j] = std::log((n_o * M[i][j] + tau) / (n_o * (1.0 - M[i][j]) + tau));
  return g;
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Inverse standard normal CDF by P. J. Acklam's rational approximation,
/// relative error below 1.15e-9 on (0,1).
inline double normal_quantile(double p) {
  if (!(p > 0 && p < 1)) throw std::domain_error("normal quantile needs p in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > 1 - p_low) return -normal_quantile(1 - p);
  const double q = p - 0.5, r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

/// Least squares through the origin of z = Phi^-1(m) on g, over off-diagonal
/// entries with m strictly inside (0,1).
inline double fit_lambda(const Matrix& G, const Matrix& M) {
  double zg = 0, gg = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < M.size(); ++i)
    for (std::size_t j = 0; j < M.size(); ++j) {
      if (i == j || !(M[i][j] > 0 && M[i][j] < 1)) continue;
      zg += normal_quantile(M[i][j]) * G[i][j];
      gg += G[i][j] * G[i][j];
      ++used;
    }
  if (used == 0) throw std::domain_error("lambda undefined: every proportion is 0 or 1");
  if (gg == 0) throw std::domain_error("lambda undefined: every logistic value is 0 (all ties)");
  return zg / gg;
}

struct MethodScore {
  std::size_t method = 0;
  double z = 0;
};

struct ZScoreReport {
  std::optional<double> lambda;  // empty when G = 0, which forces Z = 0
  double n_o = 0;
  double tau = 0.5;
  double half_width = 0;  // 95% interval, 1.96 / sqrt(2 N_o)
  std::vector<MethodScore> scores;
  Matrix F, M, G, Z;
};

inline double confidence_half_width(double n_o) {
  if (!(n_o > 0)) throw std::invalid_argument("N_o must be positive");
  return 1.96 / std::sqrt(2.0 * n_o);
}

/// Z = lambda G; score of method i is the mean of column i off the diagonal.
inline ZScoreReport scores(const Matrix& G, double lambda, double n_o) {
  if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
  const std::size_t n = G.size();
  if (n < 2) throw std::invalid_argument("need at least two methods");
  ZScoreReport r;
  r.lambda = lambda;
  r.n_o = n_o;
  r.half_width = confidence_half_width(n_o);
  r.G = G;
  r.Z = square(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) r.Z[i][j] = lambda * G[i][j];
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (i != j) s += r.Z[i][j];
    r.scores.push_back({j, s / static_cast<double>(n - 1)});
  }
  return r;
}

/// Full pipeline from records. An all-ties tally yields Z = 0 and no lambda.
inline ZScoreReport evaluate(const std::vector<ComparisonRecord>& records, std::size_t n_methods, double tau = 0.5) {
  const auto t = tally(records, n_methods);
  const auto M = percentage(t.F, t.n_o);
  const auto G = logistic(M, t.n_o, tau);
  bool all_zero = true;
  for (std::size_t i = 0; i < G.size(); ++i)
    for (std::size_t j = 0; j < G.size(); ++j) all_zero &= i == j || G[i][j] == 0;
  ZScoreReport r = scores(G, all_zero ? 0.0 : fit_lambda(G, M), t.n_o);
  if (all_zero) r.lambda.reset();
  r.tau = tau;
  r.F = t.F;
  r.M = M;
  return r;
}

/// Distinct comparisons when every pair of n methods is judged on n_u outfits.
inline std::size_t comparison_count(std::size_t n_methods, std::size_t n_u) {
  return n_methods * (n_methods - 1) * n_u / 2;
}

/// N_o judgments per unordered pair; i beats j with probability
/// Phi((s_i - s_j) / sqrt 2).
inline std::vector<ComparisonRecord> simulate_judgments(const std::vector<double>& true_scales, std::size_t n_o,
                                                        std::uint64_t seed) {
  if (n_o == 0) throw std::invalid_argument("N_o must be at least 1");
  Rng rng(derive_seed(seed, "thurstone-simulate", {}));
  std::vector<ComparisonRecord> out;
  out.reserve(comparison_count(true_scales.size(), n_o));
  for (std::size_t i = 0; i < true_scales.size(); ++i)
    for (std::size_t j = i + 1; j < true_scales.size(); ++j) {
      const double p = normal_cdf((true_scales[i] - true_scales[j]) / std::sqrt(2.0));
      for (std::size_t k = 0; k < n_o; ++k) {
        const bool i_wins = uniform01(rng) < p;
        out.push_back({i, j, i_wins ? 1.0 : 0.0, i_wins ? 0.0 : 1.0});
      }
    }
  return out;
}

// ---- files ----

inline void write_comparisons_csv(const std::string& path, const std::vector<ComparisonRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "method_i,method_j,score_i,score_j\n";
  for (const auto& r : records) out << r.method_i << ',' << r.method_j << ',' << r.score_i << ',' << r.score_j << '\n';
}

/// Returns the records; `n_methods` is one past the largest method id.
inline std::vector<ComparisonRecord> read_comparisons_csv(const std::string& path, std::size_t* n_methods = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("method_i,method_j,score_i,score_j", 0) != 0)
    throw std::invalid_argument(path + ": header must be method_i,method_j,score_i,score_j");
  std::vector<ComparisonRecord> out;
  std::size_t n = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[4];
    for (auto& x : f)
      if (!std::getline(ss, x, ',')) throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      for (int k = 0; k < 2; ++k)
        if (f[k].empty() || f[k].find_first_not_of("0123456789") != std::string::npos)
          throw std::invalid_argument("method id");
      ComparisonRecord r;
      r.method_i = std::stoul(f[0]);
      r.method_j = std::stoul(f[1]);
      r.score_i = std::stod(f[2]);
      r.score_j = std::stod(f[3]);
      n = std::max({n, r.method_i + 1, r.method_j + 1});
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": malformed record");
    }
  }
  if (n_methods) *n_methods = n;
  return out;
}

inline constexpr int kReportSchema = 1;

inline nlohmann::json report_to_json(const ZScoreReport& r, bool with_matrices) {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& s : r.scores)
    scores.push_back({{"method", s.method}, {"z", s.z}, {"ci", {s.z - r.half_width, s.z + r.half_width}}});
  nlohmann::json j{{"schema_version", kReportSchema},
                   {"lambda", r.lambda ? nlohmann::json(*r.lambda) : nlohmann::json(nullptr)},
                   {"N_o", r.n_o},
                   {"tau", r.tau},
                   {"half_width", r.half_width},
                   {"scores", scores}};
  if (with_matrices) j["matrices"] = {{"F", r.F}, {"M", r.M}, {"G", r.G}, {"Z", r.Z}};
  return j;
}

}  // namespace pemb::thurstone
