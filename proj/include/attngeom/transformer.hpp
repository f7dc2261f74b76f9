#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "attngeom/matrix.hpp"
#include "attngeom/rng.hpp"

namespace attngeom {

struct ModelConfig {
  std::size_t num_layers = 1;
  std::size_t num_heads = 1;
  std::size_t model_dim = 16;   // divisible by num_heads
  std::size_t ff_dim = 32;
  std::size_t vocab_size = 16;
  std::size_t max_seq = 64;
  bool causal = false;

  std::size_t head_dim() const { return model_dim / num_heads; }
  void validate() const;
};

struct LayerParams {
  Matrix w_q;  // d x d, head blocks concatenated column-wise
  Matrix w_k;  // d x d
  Matrix w_v;  // d x d
  Matrix w_1;  // d x d_f
  Matrix w_2;  // d_f x d
};

struct ModelParams {
  Matrix w_e;  // V x d
  Matrix w_p;  // N_max x d
  std::vector<LayerParams> layers;
  Matrix w_u;  // d x V
};

enum class InitScheme {
  IidGaussian,   // every entry N(0, sigma^2)
  SymmetricQk,   // draw W_q, set W_k := W_q so each head's W_qk is symmetric PSD
};

ModelParams init_params(const ModelConfig& config, InitScheme scheme, double sigma,
                        std::uint64_t seed);

/// W_q W_k^T for a layer; equals the sum of the per-head block products.
Matrix compose_wqk(const ModelParams& params, std::size_t layer);

/// Raw and softmax-normalized attention scores for an explicit bilinear form:
/// raw = X wqk X^T / sqrt(d); causal masks j > i before the softmax.
std::pair<Matrix, Matrix> attention_scores(const Matrix& x, const Matrix& wqk, bool causal);

/// Per-layer activations cached by forward() and reused by the backward pass.
struct LayerTrace {
  Matrix input;                  // X^{l-1}, N x d
  std::vector<Matrix> head_raw;  // per-head raw scores with causal mask, N x N
  std::vector<Matrix> head_attn; // per-head normalized scores, N x N
  std::vector<Matrix> head_v;    // per-head value projections, N x d_h
  Matrix attn_residual;          // X-hat = X + attention output, N x d
  Matrix ffn_pre;                // X-hat W_1, N x d_f
  Matrix output;                 // X^l, N x d
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  std::vector<Matrix> raw_scores;   // head-mean of raw scores per layer, N x N
  std::vector<Matrix> attn_scores;  // head-mean of normalized scores per layer
  Matrix final_embeddings;          // X^L, N x d
  Matrix logits;                    // Z = X^L W_u, N x V
};

/// Full pass through the reference model. Token ids must be < vocab_size and
/// the sequence no longer than max_seq.
ForwardTrace forward(const ModelParams& params, const ModelConfig& config,
                     const std::vector<int>& tokens, bool causal);

double gelu(double x);
double gelu_prime(double x);

}  // namespace attngeom
