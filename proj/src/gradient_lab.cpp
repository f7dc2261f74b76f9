#include "attngeom/gradient_lab.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "attngeom/scores.hpp"

namespace attngeom {

Matrix Rank1Decomposition::reconstruction() const {
  const std::size_t n = factors.rows();
  const std::size_t d = factors.cols();
  Matrix out(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double b = betas(i, j);
      if (b == 0.0) continue;
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c)
          out(r, c) += b * factors(i, r) * factors(j, c);
    }
  return out;
}

Rank1Decomposition rank1_decomposition(
    const Matrix& x, const Matrix& deltas,
    const std::vector<std::vector<std::size_t>>& conditioning) {
  if (!x.same_shape(deltas))
    throw ShapeError("rank1_decomposition: X " + x.shape_str() + " vs deltas " +
                     deltas.shape_str());
  if (conditioning.size() != x.rows())
    throw ShapeError("rank1_decomposition: conditioning has " +
                     std::to_string(conditioning.size()) + " rows, X has " +
                     std::to_string(x.rows()));
  const std::size_t n = x.rows();
  Rank1Decomposition dec;
  dec.factors = x;
  dec.betas = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : conditioning[i]) {
      if (j >= n)
        throw std::out_of_range("rank1_decomposition: conditioning index " +
                                std::to_string(j) + " >= N");
      double b = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) b += deltas(i, c) * x(j, c);
      dec.betas(i, j) = b;
    }
  return dec;
}

Matrix linear_attention_grad(const Matrix& x, const Matrix& wqk, const Matrix& deltas,
                             const std::vector<std::vector<std::size_t>>& conditioning) {
  if (wqk.rows() != x.cols() || wqk.cols() != x.cols())
    throw ShapeError("linear_attention_grad: W_qk " + wqk.shape_str() +
                     " incompatible with X " + x.shape_str());
  const Rank1Decomposition dec = rank1_decomposition(x, deltas, conditioning);
  // fast path: X^T B X
  const Matrix grad = matmul(matmul(transpose(x), dec.betas), x);
  const Matrix slow = dec.reconstruction();
  const double ref = frobenius_norm(grad);
  const double diff = frobenius_norm(grad - slow);
  if (diff > 1e-12 * (ref > 0.0 ? ref : 1.0))
    throw std::logic_error("linear_attention_grad: dual-path mismatch, relative error " +
                           std::to_string(ref > 0.0 ? diff / ref : diff));
  return grad;
}

namespace {

Matrix weighted_sum_outer(const std::vector<double>& left,
                          const std::vector<std::pair<double, std::vector<double>>>& terms,
                          bool left_is_column) {
  const std::size_t d = left.size();
  std::vector<double> acc(d, 0.0);
  for (const auto& [beta, vec] : terms) {
    if (vec.size() != d)
      throw ShapeError("update: vector of dim " + std::to_string(vec.size()) +
                       ", expected " + std::to_string(d));
    for (std::size_t i = 0; i < d; ++i) acc[i] += beta * vec[i];
  }
  return left_is_column ? outer(left, acc) : outer(acc, left);
}

}  // namespace

Matrix context_update(const std::vector<double>& x_star,
                      const std::vector<std::pair<double, std::vector<double>>>& predicted) {
  if (x_star.empty()) throw ShapeError("context_update: empty x_star");
  return weighted_sum_outer(x_star, predicted, /*left_is_column=*/false);
}

Matrix prediction_update(const std::vector<double>& x_star,
                         const std::vector<std::pair<double, std::vector<double>>>& context) {
  if (x_star.empty()) throw ShapeError("prediction_update: empty x_star");
  return weighted_sum_outer(x_star, context, /*left_is_column=*/true);
}

void EmbeddingDistribution::validate() const {
  if (dim == 0) throw std::invalid_argument("EmbeddingDistribution: dim must be > 0");
  if (covariance.rows() != dim || covariance.cols() != dim)
    throw ShapeError("EmbeddingDistribution: covariance " + covariance.shape_str() +
                     " does not match dim " + std::to_string(dim));
  double scale = 0.0;
  for (double v : covariance.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i + 1; j < dim; ++j)
      if (std::abs(covariance(i, j) - covariance(j, i)) > 1e-9 * std::max(scale, 1.0))
        throw std::invalid_argument("EmbeddingDistribution: covariance not symmetric");
  const auto [eigvals, eigvecs] = sym_eig(covariance);
  (void)eigvecs;
  double trace = 0.0;
  for (double v : eigvals) {
    if (v < -1e-9 * std::max(scale, 1.0))
      throw std::invalid_argument("EmbeddingDistribution: covariance not PSD");
    trace += v;
  }
  if (trace <= 0.0)
    throw std::invalid_argument("EmbeddingDistribution: degenerate covariance (zero trace)");
}

Matrix EmbeddingDistribution::factor() const {
  validate();
  auto [eigvals, eigvecs] = sym_eig(covariance);
  Matrix f = eigvecs;  // columns are eigenvectors
  for (std::size_t j = 0; j < dim; ++j) {
    const double s = std::sqrt(std::max(eigvals[j], 0.0));
    for (std::size_t i = 0; i < dim; ++i) f(i, j) *= s;
  }
  return f;
}

namespace {

std::vector<double> draw(const Matrix& factor, Rng& rng) {
  const std::size_t d = factor.rows();
  std::vector<double> z(d), x(d, 0.0);
  for (double& v : z) v = rng.gaussian();
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i] += factor(i, j) * z[j];
  return x;
}

}  // namespace

NormRatioResult norm_ratio_mc(const EmbeddingDistribution& dist,
                              const std::vector<double>& betas, std::size_t k,
                              std::size_t m, UpdateRole role, std::size_t trials,
                              std::uint64_t seed) {
  dist.validate();
  if (trials < 1) throw std::invalid_argument("norm_ratio_mc: trials must be >= 1");
  if (betas.empty()) throw std::invalid_argument("norm_ratio_mc: empty betas");
  if (k >= dist.dim || m >= dist.dim)
    throw std::out_of_range("norm_ratio_mc: k or m out of range");

  const std::size_t d = dist.dim;
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += dist.covariance(i, i);

  double closed;
  if (role == UpdateRole::Context) {
    const double smm = dist.covariance(m, m);
    if (smm <= 0.0)
      throw std::invalid_argument("norm_ratio_mc: covariance(m,m) must be > 0");
    closed = trace / (static_cast<double>(d) * smm);
  } else {
    closed = static_cast<double>(d) * dist.covariance(k, k) / trace;
  }

  const Matrix f = dist.factor();
  Rng base(seed);
  double col_acc = 0.0, row_acc = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = base.fork(t);
    // u = sum_i beta_i x_i over the partner embeddings; the token's own
    // embedding y is isotropic standard normal and independent of u, so its
    // second moments are integrated out exactly (E[y_k^2] = 1, E[||y||^2] = d)
    // conditional on each sampled u. This keeps the 1/sqrt(trials) rate while
    // removing the variance y would otherwise contribute.
    std::vector<double> u(d, 0.0);
    for (double beta : betas) {
      const std::vector<double> x = draw(f, rng);
      for (std::size_t i = 0; i < d; ++i) u[i] += beta * x[i];
    }
    const double u_sq = dot(u, u);
    if (role == UpdateRole::Context) {
      col_acc += u_sq;  // dW = u y^T: E_y ||col_k||^2 = E[y_k^2] ||u||^2
      row_acc += static_cast<double>(d) * u[m] * u[m];
    } else {
      col_acc += static_cast<double>(d) * u[k] * u[k];  // dW = y u^T
      row_acc += u_sq;
    }
  }
  if (row_acc == 0.0)
    throw UndefinedScoreError("norm_ratio_mc: zero row-norm accumulator");
  return {col_acc / row_acc, closed};
}

CountingResult counting_ratio(const std::vector<double>& position_probs, CountingMode mode) {
  if (position_probs.empty())
    throw EmptyInputError("counting_ratio: empty distribution");
  double total = 0.0;
  for (double p : position_probs) {
    if (p < 0.0) throw std::invalid_argument("counting_ratio: negative probability");
    total += p;
  }
  if (total == 0.0)
    throw std::invalid_argument("counting_ratio: all-zero distribution");

  const double n = static_cast<double>(position_probs.size());
  double mu = 0.0, num = 0.0, den = 0.0;
  for (std::size_t idx = 0; idx < position_probs.size(); ++idx) {
    const double p = position_probs[idx] / total;
    const double pos = static_cast<double>(idx + 1);  // 1-based
    mu += pos * p;
    num += (n - pos) * p;
    den += (pos - 1.0) * p;
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const double remark = mu > 1.0 ? (n - mu) / (mu - 1.0) : kInf;
  if (mode == CountingMode::Bidirectional) return {1.0, false, mu, remark};
  if (den == 0.0) return {kInf, true, mu, remark};
  return {num / den, false, mu, remark};
}

double counting_ratio_mc(const std::vector<double>& position_probs, std::size_t samples,
                         std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("counting_ratio_mc: samples must be >= 1");
  double total = 0.0;
  for (double p : position_probs) total += p;
  if (total <= 0.0)
    throw std::invalid_argument("counting_ratio_mc: all-zero distribution");

  std::vector<double> cdf(position_probs.size());
  double run = 0.0;
  for (std::size_t i = 0; i < position_probs.size(); ++i) {
    run += position_probs[i] / total;
    cdf[i] = run;
  }
  const double n = static_cast<double>(position_probs.size());
  Rng rng(seed);
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < samples; ++t) {
    const double u = rng.uniform();
    std::size_t idx = 0;
    while (idx + 1 < cdf.size() && u > cdf[idx]) ++idx;
    const double pos = static_cast<double>(idx + 1);
    num += n - pos;
    den += pos - 1.0;
  }
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  return num / den;
}

TailResult tail_prob_check(const Sampler& sampler_a, const Sampler& sampler_b, double mu,
                           double sigma_a, double sigma_b, double z, std::size_t trials,
                           std::uint64_t seed) {
  if (!(sigma_a > sigma_b) || !(sigma_b > 0.0))
    throw std::invalid_argument("tail_prob_check: need sigma_a > sigma_b > 0");
  if (trials < 1) throw std::invalid_argument("tail_prob_check: trials must be >= 1");
  Rng rng_a = Rng(seed).fork(1);
  Rng rng_b = Rng(seed).fork(2);
  std::size_t hits_a = 0, hits_b = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    if (sampler_a(rng_a) > z) ++hits_a;
    if (sampler_b(rng_b) > z) ++hits_b;
  }
  const double inv = 1.0 / static_cast<double>(trials);
  return {hits_a * inv, hits_b * inv, std::sqrt(sigma_a * sigma_b) - mu};
}

PairUpdate pairwise_symmetric_update(double beta_ij, double beta_ji,
                                     const std::vector<double>& x_i,
                                     const std::vector<double>& x_j) {
  if (x_i.size() != x_j.size())
    throw ShapeError("pairwise_symmetric_update: dim mismatch");
  const Matrix k_ij = outer(x_i, x_j);
  Matrix update = k_ij;
  update *= beta_ij;
  update.add_scaled(transpose(k_ij), beta_ji);
  const double s = symmetry_score(update);
  return {std::move(update), s};
}

double mlm_symmetric_pair_fraction(std::size_t n, double mask_fraction) {
  if (n < 2) throw std::invalid_argument("mlm_symmetric_pair_fraction: n must be >= 2");
  if (mask_fraction <= 0.0 || mask_fraction >= 1.0)
    throw std::invalid_argument("mlm_symmetric_pair_fraction: mask_fraction in (0,1)");
  const double m = std::round(mask_fraction * static_cast<double>(n));
  if (m < 1.0 || m >= static_cast<double>(n))
    throw std::invalid_argument("mlm_symmetric_pair_fraction: degenerate mask count");
  // ordered masked-masked pairs m(m-1) over masked-unmasked pairs m(n-m)
  return (m - 1.0) / (static_cast<double>(n) - m);
}

double mlm_symmetric_pair_fraction_limit(std::size_t n, double mask_fraction) {
  const double pn = mask_fraction * static_cast<double>(n);
  return pn / (static_cast<double>(n) - pn);
}

}  // namespace attngeom
