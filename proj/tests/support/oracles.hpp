#pragma once

// Reference implementations written independently of the library code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace oracle {

/// LCS by exhaustive subsequence enumeration of the shorter sequence.
inline std::size_t lcs_brute_force(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const auto& s = a.size() <= b.size() ? a : b;
  const auto& t = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  const std::size_t n = s.size();
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    const auto len = static_cast<std::size_t>(__builtin_popcountll(mask));
    if (len <= best) continue;
    std::size_t j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (!(mask >> i & 1)) continue;
      while (j < t.size() && t[j] != s[i]) ++j;
      if (j == t.size()) ok = false;
      else ++j;
    }
    if (ok) best = len;
  }
  return best;
}

/// Memoized recursion over suffixes.
inline std::size_t lcs_recursive(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
  auto rec = [&](auto&& self, std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    auto& m = memo[i][j];
    if (m >= 0) return static_cast<std::size_t>(m);
    std::size_t r = a[i] == b[j] ? 1 + self(self, i + 1, j + 1) : std::max(self(self, i + 1, j), self(self, i, j + 1));
    m = static_cast<long>(r);
    return r;
  };
  return rec(rec, 0, 0);
}

inline double rouge_l(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(lcs_brute_force(cand, ref));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(cand.size());
  const double r = l / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

inline double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, int> cp, cg;
  for (const auto& w : pred) ++cp[w];
  for (const auto& w : gold) ++cg[w];
  double overlap = 0.0;
  for (const auto& [w, c] : cp) {
    auto it = cg.find(w);
    if (it != cg.end()) overlap += std::min(c, it->second);
  }
  if (overlap == 0.0) return 0.0;
  const double p = overlap / static_cast<double>(pred.size());
  const double r = overlap / static_cast<double>(gold.size());
  return 2.0 * p * r / (p + r);
}

/// Levenshtein over bytes (ASCII inputs) by plain recursion with memo.
inline std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
  auto rec = [&](auto&& self, std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto& m = memo[i][j];
    if (m >= 0) return static_cast<std::size_t>(m);
    std::size_t r = self(self, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    r = std::min({r, self(self, i + 1, j) + 1, self(self, i, j + 1) + 1});
    m = static_cast<long>(r);
    return r;
  };
  return rec(rec, 0, 0);
}

/// GAE written as the explicit discounted sum of TD residuals.
inline std::vector<double> gae(const std::vector<double>& r, const std::vector<double>& v, double gamma, double lambda) {
  const std::size_t n = r.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double next = t + 1 < n ? v[t + 1] : 0.0;
    delta[t] = r[t] + gamma * next - v[t];
  }
  std::vector<double> adv(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double coef = 1.0;
    for (std::size_t l = t; l < n; ++l) {
      adv[t] += coef * delta[l];
      coef *= gamma * lambda;
    }
  }
  return adv;
}

inline double log_sigmoid(double x) { return -std::log(1.0 + std::exp(-x)); }

}  // namespace oracle
