#include "attngeom/transformer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace attngeom {

void ModelConfig::validate() const {
  if (num_layers < 1 || num_heads < 1 || model_dim < 1 || ff_dim < 1 ||
      vocab_size < 1 || max_seq < 1)
    throw std::invalid_argument("ModelConfig: all counts must be >= 1");
  if (model_dim % num_heads != 0)
    throw std::invalid_argument("ModelConfig: model_dim must be divisible by num_heads");
}

double gelu(double x) {
  // exact erf form
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

double gelu_prime(double x) {
  const double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  const double pdf = 0.3989422804014326779 * std::exp(-0.5 * x * x);
  return phi + x * pdf;
}

ModelParams init_params(const ModelConfig& config, InitScheme scheme, double sigma,
                        std::uint64_t seed) {
  config.validate();
  if (sigma <= 0.0) throw std::invalid_argument("init_params: sigma must be > 0");
  Rng rng(seed);
  ModelParams p;
  p.w_e = rng.gaussian_matrix(config.vocab_size, config.model_dim, sigma);
  p.w_p = rng.gaussian_matrix(config.max_seq, config.model_dim, sigma);
  p.layers.resize(config.num_layers);
  for (auto& layer : p.layers) {
    layer.w_q = rng.gaussian_matrix(config.model_dim, config.model_dim, sigma);
    layer.w_k = scheme == InitScheme::SymmetricQk
                    ? layer.w_q
                    : rng.gaussian_matrix(config.model_dim, config.model_dim, sigma);
    layer.w_v = rng.gaussian_matrix(config.model_dim, config.model_dim, sigma);
    layer.w_1 = rng.gaussian_matrix(config.model_dim, config.ff_dim, sigma);
    layer.w_2 = rng.gaussian_matrix(config.ff_dim, config.model_dim, sigma);
  }
  p.w_u = rng.gaussian_matrix(config.model_dim, config.vocab_size, sigma);
  return p;
}

Matrix compose_wqk(const ModelParams& params, std::size_t layer) {
  if (layer >= params.layers.size())
    throw std::out_of_range("compose_wqk: layer " + std::to_string(layer) +
                            " out of range (model has " +
                            std::to_string(params.layers.size()) + " layers)");
  return matmul(params.layers[layer].w_q, transpose(params.layers[layer].w_k));
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Matrix col_slice(const Matrix& m, std::size_t c0, std::size_t c1) {
  Matrix out(m.rows(), c1 - c0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = m(i, j);
  return out;
}

void add_into_col_slice(Matrix& dst, const Matrix& src, std::size_t c0) {
  for (std::size_t i = 0; i < src.rows(); ++i)
    for (std::size_t j = 0; j < src.cols(); ++j) dst(i, j + c0) += src(i, j);
}

void apply_causal_mask(Matrix& scores) {
  for (std::size_t i = 0; i < scores.rows(); ++i)
    for (std::size_t j = i + 1; j < scores.cols(); ++j) scores(i, j) = kNegInf;
}

}  // namespace

std::pair<Matrix, Matrix> attention_scores(const Matrix& x, const Matrix& wqk, bool causal) {
  if (x.cols() != wqk.rows())
    throw ShapeError("attention_scores: X " + x.shape_str() + " vs W_qk " + wqk.shape_str());
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  Matrix raw = matmul(matmul(x, wqk), transpose(x));
  raw *= scale;
  Matrix masked = raw;
  if (causal) apply_causal_mask(masked);
  return {std::move(masked), row_softmax(masked)};
}

ForwardTrace forward(const ModelParams& params, const ModelConfig& config,
                     const std::vector<int>& tokens, bool causal) {
  config.validate();
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  if (tokens.size() > config.max_seq)
    throw std::out_of_range("forward: sequence length " + std::to_string(tokens.size()) +
                            " exceeds max_seq " + std::to_string(config.max_seq));
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size)
      throw std::out_of_range("forward: token id " + std::to_string(t) +
                              " outside vocabulary of size " +
                              std::to_string(config.vocab_size));

  const std::size_t n = tokens.size();
  const std::size_t d = config.model_dim;
  const std::size_t dh = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  ForwardTrace trace;
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      x(i, j) = params.w_e(static_cast<std::size_t>(tokens[i]), j) + params.w_p(i, j);

  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const LayerParams& lp = params.layers[l];
    LayerTrace lt;
    lt.input = x;

    Matrix attn_out(n, d);
    Matrix raw_mean(n, n), attn_mean(n, n);
    for (std::size_t h = 0; h < config.num_heads; ++h) {
      const std::size_t c0 = h * dh, c1 = (h + 1) * dh;
      const Matrix q = matmul(x, col_slice(lp.w_q, c0, c1));
      const Matrix k = matmul(x, col_slice(lp.w_k, c0, c1));
      Matrix raw = matmul(q, transpose(k));
      raw *= scale;
      if (causal) apply_causal_mask(raw);
      Matrix attn = row_softmax(raw);
      Matrix v = matmul(x, col_slice(lp.w_v, c0, c1));
      add_into_col_slice(attn_out, matmul(attn, v), c0);
      raw_mean.add_scaled(raw, 1.0 / static_cast<double>(config.num_heads));
      attn_mean.add_scaled(attn, 1.0 / static_cast<double>(config.num_heads));
      lt.head_raw.push_back(std::move(raw));
      lt.head_attn.push_back(std::move(attn));
      lt.head_v.push_back(std::move(v));
    }

    lt.attn_residual = x + attn_out;
    lt.ffn_pre = matmul(lt.attn_residual, lp.w_1);
    Matrix activated = lt.ffn_pre;
    for (double& v : activated.data()) v = gelu(v);
    lt.output = lt.attn_residual + matmul(activated, lp.w_2);

    x = lt.output;
    trace.raw_scores.push_back(std::move(raw_mean));
    trace.attn_scores.push_back(std::move(attn_mean));
    trace.layers.push_back(std::move(lt));
  }

  trace.final_embeddings = x;
  trace.logits = matmul(x, params.w_u);
  return trace;
}

}  // namespace attngeom
