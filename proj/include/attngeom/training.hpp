#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "attngeom/scores.hpp"
#include "attngeom/transformer.hpp"

namespace attngeom {

enum class Objective { Autoregressive, Bidirectional };

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainingConfig {
  Objective objective = Objective::Bidirectional;
  double mask_prob = 0.15;  // bidirectional only
  OptimizerConfig optimizer;
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  std::size_t seq_len = 64;
  std::uint64_t seed = 0;
  std::size_t score_every = 50;
  double gamma = 2.0;
  void validate() const;
};

/// One tensor per ModelParams field, matching shapes.
struct Gradients {
  Matrix w_e, w_p, w_u;
  std::vector<LayerParams> layers;

  static Gradients zeros_like(const ModelParams& params);
  void add_scaled(const Gradients& other, double c);
};

/// A sequence prepared for one objective: `inputs` is what the model sees,
/// `targets[i]` pairs a position with the token id to predict there.
struct Example {
  std::vector<int> inputs;
  std::vector<std::pair<std::size_t, int>> targets;
};

/// AR example: position i predicts tokens[i+1], causal attention.
Example make_ar_example(const std::vector<int>& tokens);

/// Each position masked independently with probability rho; at least one
/// position is forced if the draw selects none. Targets are the original
/// tokens at the masked positions.
Example make_mlm_example(const std::vector<int>& tokens, double rho, int mask_id, Rng& rng);

/// mask_tokens per contract: returns (masked sequence, mask index set).
std::pair<std::vector<int>, std::vector<std::size_t>> mask_tokens(
    const std::vector<int>& tokens, double rho, int mask_id, Rng& rng);

/// Per-layer hook data for gradient analysis: the attention-layer inputs
/// X^{l-1} and the backpropagated errors at each attention output
/// (delta_i = sum_h W_{v,h} dO_h[i]), so beta_ij = delta_i . x_j.
struct BackwardTap {
  std::vector<Matrix> attn_input;  // per layer, N x d
  std::vector<Matrix> attn_delta;  // per layer, N x d
};

/// Mean cross-entropy over all target positions in the batch plus exact
/// reverse-mode gradients for every parameter tensor.
std::pair<double, Gradients> loss_and_grads(const ModelParams& params,
                                            const ModelConfig& config,
                                            const std::vector<Example>& batch,
                                            Objective objective,
                                            BackwardTap* tap = nullptr);

struct Checkpoint {
  std::size_t step;
  double loss;  // mean loss over the window since the previous checkpoint
  ScoreReport scores;
};

struct TrainingLog {
  std::vector<Checkpoint> checkpoints;
  std::size_t steps_per_epoch = 0;
};

using TrainCallback = std::function<void(const Checkpoint&, const ModelParams&)>;

/// Runs `config.steps` optimizer updates over fixed-length windows of the
/// corpus; logs loss and per-layer W_qk scores every score_every steps
/// (checkpoint 0 included). Deterministic per seed. Callbacks receive deep
/// copies of the parameters.
TrainingLog train(ModelParams& params, const ModelConfig& model_config,
                  const std::vector<int>& corpus_ids, int mask_id,
                  const TrainingConfig& config, const TrainCallback& callback = {});

struct CharTokenizer {
  std::vector<int> ids;           // the corpus, tokenized
  std::vector<unsigned char> alphabet;  // id -> byte
  int vocab_size = 0;             // distinct bytes + 1 mask token
  int mask_id = 0;                // == vocab_size - 1
};

/// Byte-level vocabulary over the distinct bytes of `text`, plus a mask token.
CharTokenizer char_tokenizer(const std::string& text);

/// Deterministic low-entropy character stream: an order-2 Markov source over
/// a 16-letter alphabet (90% table-driven, 10% uniform noise). Learnable by
/// small models from either direction.
std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed);

/// Non-overlapping fixed-length windows: floor(len / n) of them.
std::vector<std::vector<int>> make_windows(const std::vector<int>& ids, std::size_t n);

/// Deterministic shuffle of window indices into batches of batch_size.
std::vector<std::vector<std::size_t>> make_batches(std::size_t num_windows,
                                                   std::size_t batch_size, Rng& rng);

}  // namespace attngeom
