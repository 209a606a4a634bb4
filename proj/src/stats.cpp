#include <algorithm>
#include <cmath>
#include <numeric>

#include "bdh/analysis.hpp"

namespace bdh {

namespace {

// Midranks (1-based) of values, plus the tie term sum(t^3 - t).
std::vector<double> midranks(const std::vector<double>& v, double* tie_term = nullptr) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  double ties = 0;
  for (std::size_t s = 0; s < idx.size();) {
    std::size_t e = s;
    while (e + 1 < idx.size() && v[idx[e + 1]] == v[idx[s]]) ++e;
    const double r = 0.5 * static_cast<double>(s + e) + 1.0;
    for (std::size_t k = s; k <= e; ++k) rank[idx[k]] = r;
    const double t = static_cast<double>(e - s + 1);
    ties += t * t * t - t;
    s = e + 1;
  }
  if (tie_term) *tie_term = ties;
  return rank;
}

}  // namespace

ConceptTestResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw ParameterError("mann_whitney_u needs two nonempty samples");
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size()), N = n1 + n2;
  std::vector<double> all(a);
  all.insert(all.end(), b.begin(), b.end());
  for (double x : all)
    if (!std::isfinite(x)) throw ParameterError("mann_whitney_u needs finite values");
  double ties = 0;
  const auto rank = midranks(all, &ties);
  double r1 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) r1 += rank[i];

  ConceptTestResult res;
  res.U = r1 - n1 * (n1 + 1) / 2;
  res.U_max = n1 * n2;
  res.rank_biserial = 2 * res.U / res.U_max - 1;
  const double var = n1 * n2 / 12.0 * ((N + 1) - ties / (N * (N - 1)));
  if (!(var > 0)) {
    res.p_one_sided = 0.5;
    res.rank_biserial = 0;
    return res;
  }
  const double z = (res.U - n1 * n2 / 2 - 0.5) / std::sqrt(var);
  res.p_one_sided = 0.5 * std::erfc(z / std::sqrt(2.0));
  return res;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("spearman needs equal-length samples");
  if (a.size() < 2) throw ParameterError("spearman needs at least two points");
  const auto ra = midranks(a), rb = midranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace bdh
