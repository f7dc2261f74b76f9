#pragma once

#include <stdexcept>
#include <vector>

#include "attngeom/matrix.hpp"

namespace attngeom {

/// Thrown when a score is mathematically undefined (zero denominator).
struct UndefinedScoreError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Degree of symmetry of a square matrix in [-1, 1]:
///   s = (||M_s||_F^2 - ||M_n||_F^2) / ||M||_F^2 = tr(MM) / ||M||_F^2
/// with (M_s, M_n) the symmetric/skew parts. +1 symmetric, -1 skew.
/// Zero matrix is an error, not 0.
double symmetry_score(const Matrix& m);

/// Row-vs-column outlier-norm balance in [-1, 1]:
///   d = (rbar - cbar) / (rbar + cbar)
/// where cbar sums column norms strictly above mu_c + gamma * sigma_c and
/// rbar the analogue for rows. 0 when both outlier sets are empty.
/// Negative d flags column dominance.
double directionality_score(const Matrix& m, double gamma);

struct LayerScore {
  std::size_t layer;
  double s;
  double d;
};

struct ScoreReport {
  std::vector<LayerScore> per_layer;
  double median_s, iqr_s_low, iqr_s_high;
  double median_d, iqr_d_low, iqr_d_high;
  double gamma;
};

/// Per-layer scores plus median and 25th/75th percentiles (linear
/// interpolation between ranks).
ScoreReport layer_summary(const std::vector<Matrix>& wqk_per_layer, double gamma);

/// Percentile in [0, 100] with linear interpolation between closest ranks.
double percentile(std::vector<double> values, double p);

}  // namespace attngeom
