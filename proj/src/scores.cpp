#include "attngeom/scores.hpp"

#include <algorithm>
#include <cmath>

namespace attngeom {

double symmetry_score(const Matrix& m) {
  if (m.rows() != m.cols())
    throw ShapeError("symmetry_score: matrix must be square, got " + m.shape_str());
  const double denom = frobenius_norm_sq(m);
  if (denom == 0.0)
    throw UndefinedScoreError("symmetry_score: undefined for the zero matrix");
  // ||M_s||^2 + ||M_n||^2 == ||M||^2, so this difference quotient is the
  // unique normalization that pins symmetric matrices at +1 and skew ones
  // at -1 while staying inside [-1, 1].
  auto [ms, mn] = toeplitz_split(m);
  return (frobenius_norm_sq(ms) - frobenius_norm_sq(mn)) / denom;
}

namespace {

double outlier_norm_sum(const std::vector<double>& norms, double gamma) {
  const std::size_t n = norms.size();
  double mean = 0.0;
  for (double v : norms) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : norms) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double threshold = mean + gamma * std::sqrt(var);
  double sum = 0.0;
  for (double v : norms)
    if (v > threshold) sum += v;  // strict inequality; ties excluded
  return sum;
}

}  // namespace

double directionality_score(const Matrix& m, double gamma) {
  if (m.rows() != m.cols())
    throw ShapeError("directionality_score: matrix must be square, got " + m.shape_str());
  const double rbar = outlier_norm_sum(row_norms(m), gamma);
  const double cbar = outlier_norm_sum(col_norms(m), gamma);
  if (rbar == 0.0 && cbar == 0.0) return 0.0;
  return (rbar - cbar) / (rbar + cbar);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw EmptyInputError("percentile: empty input");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

ScoreReport layer_summary(const std::vector<Matrix>& wqk_per_layer, double gamma) {
  if (wqk_per_layer.empty())
    throw EmptyInputError("layer_summary: no layers given");
  ScoreReport report;
  report.gamma = gamma;
  std::vector<double> ss, ds;
  ss.reserve(wqk_per_layer.size());
  ds.reserve(wqk_per_layer.size());
  for (std::size_t l = 0; l < wqk_per_layer.size(); ++l) {
    const double s = symmetry_score(wqk_per_layer[l]);
    const double d = directionality_score(wqk_per_layer[l], gamma);
    report.per_layer.push_back({l, s, d});
    ss.push_back(s);
    ds.push_back(d);
  }
  report.median_s = percentile(ss, 50.0);
  report.iqr_s_low = percentile(ss, 25.0);
  report.iqr_s_high = percentile(ss, 75.0);
  report.median_d = percentile(ds, 50.0);
  report.iqr_d_low = percentile(ds, 25.0);
  report.iqr_d_high = percentile(ds, 75.0);
  return report;
}

}  // namespace attngeom
