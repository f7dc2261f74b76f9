#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "attngeom/matrix.hpp"
#include "attngeom/rng.hpp"

namespace attngeom {

/// The gradient of softmax-free attention w.r.t. W_qk written as a weighted
/// sum of rank-1 outer products: sum_ij betas(i,j) * x_i x_j^T.
struct Rank1Decomposition {
  Matrix betas;    // N x N, zero wherever j is outside the context of i
  Matrix factors;  // the embeddings X, N x d

  /// Explicit term-by-term sum; O(N^2 d^2), used as the slow oracle path.
  Matrix reconstruction() const;
};

/// beta_ij = delta_i . x_j on the given conditioning sets, zero elsewhere.
Rank1Decomposition rank1_decomposition(const Matrix& x, const Matrix& deltas,
                                       const std::vector<std::vector<std::size_t>>& conditioning);

/// Analytic dL/dW_qk for attention computed without the row-wise softmax.
/// Evaluated two ways internally (matrix calculus vs explicit rank-1 sum)
/// and cross-checked to 1e-12 relative Frobenius before returning.
Matrix linear_attention_grad(const Matrix& x, const Matrix& wqk, const Matrix& deltas,
                             const std::vector<std::vector<std::size_t>>& conditioning);

/// (sum_i beta_i x_i) . x_star^T : every column is a multiple of the same
/// vector. Empty list gives the zero matrix.
Matrix context_update(const std::vector<double>& x_star,
                      const std::vector<std::pair<double, std::vector<double>>>& predicted);

/// x_star . (sum_j beta_j x_j^T) : every row is a multiple of the same vector.
Matrix prediction_update(const std::vector<double>& x_star,
                         const std::vector<std::pair<double, std::vector<double>>>& context);

/// Zero-mean embedding distribution with covariance sigma.
struct EmbeddingDistribution {
  std::size_t dim = 0;
  Matrix covariance;  // dim x dim, symmetric PSD

  void validate() const;
  /// F with F F^T = covariance (eigendecomposition); x = F z, z std normal.
  Matrix factor() const;
};

enum class UpdateRole { Context, Prediction };

struct NormRatioResult {
  double mc_ratio;
  double closed_form;
};

/// Monte Carlo estimate of E||dW_{.,k}||^2 / E||dW_{m,.}||^2 for the rank-1
/// update of a token against `betas.size()` partners with embeddings drawn
/// from `dist` (the token's own embedding is standard normal). Closed forms:
/// Tr(S)/(d S_mm) for context, d S_kk/Tr(S) for prediction.
NormRatioResult norm_ratio_mc(const EmbeddingDistribution& dist,
                              const std::vector<double>& betas, std::size_t k,
                              std::size_t m, UpdateRole role, std::size_t trials,
                              std::uint64_t seed);

enum class CountingMode { Autoregressive, Bidirectional };

/// Expected-count ratio (tokens predicted by t*) / (tokens predicting t*).
struct CountingResult {
  double ratio;       // +inf when infinite
  bool infinite;      // denominator was exactly zero
  double mu;          // expected position index (1-based)
  double remark_form; // (N - mu) / (mu - 1); +inf when mu == 1
};

/// position_probs[k] is the (unnormalized) probability that t* sits at
/// 1-based position k+1. Bidirectional is identically 1. The degenerate AR
/// case (all mass at position 1) returns the infinite sentinel, not an error,
/// so parameter sweeps never abort.
CountingResult counting_ratio(const std::vector<double>& position_probs, CountingMode mode);

/// Sequence-sampling estimate of the autoregressive ratio: draw positions
/// from position_probs and average the (N-k) and (k-1) counts.
double counting_ratio_mc(const std::vector<double>& position_probs, std::size_t samples,
                         std::uint64_t seed);

using Sampler = std::function<double(Rng&)>;

struct TailResult {
  double p_a;
  double p_b;
  double bound;  // sqrt(sigma_a sigma_b) - mu; the comparison only holds above it
};

/// Empirical exceedance probabilities Pr[X > z] for two samplers with common
/// mean mu and spreads sigma_a > sigma_b > 0.
TailResult tail_prob_check(const Sampler& sampler_a, const Sampler& sampler_b, double mu,
                           double sigma_a, double sigma_b, double z, std::size_t trials,
                           std::uint64_t seed);

struct PairUpdate {
  Matrix update;  // beta_ij x_i x_j^T + beta_ji (x_i x_j^T)^T
  double s;       // symmetry score of the update
};

/// The two-sided update contributed by a token pair; exactly symmetric
/// (s = 1) whenever beta_ij == beta_ji.
PairUpdate pairwise_symmetric_update(double beta_ij, double beta_ji,
                                     const std::vector<double>& x_i,
                                     const std::vector<double>& x_j);

/// Fraction of symmetrizable update pairs under masking: exact count
/// (M-1)/(N-M) for M = round(p*N) masked tokens, which approaches
/// pN/(N-pN) for large N.
double mlm_symmetric_pair_fraction(std::size_t n, double mask_fraction);

/// Large-N limit pN/(N-pN).
double mlm_symmetric_pair_fraction_limit(std::size_t n, double mask_fraction);

}  // namespace attngeom
