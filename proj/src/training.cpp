#include "attngeom/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace attngeom {

void TrainingConfig::validate() const {
  if (objective == Objective::Bidirectional && (mask_prob <= 0.0 || mask_prob >= 1.0))
    throw std::invalid_argument("TrainingConfig: mask_prob must be in (0,1)");
  if (optimizer.lr <= 0.0) throw std::invalid_argument("TrainingConfig: lr must be > 0");
  if (batch_size < 1 || seq_len < 1)
    throw std::invalid_argument("TrainingConfig: batch_size and seq_len must be >= 1");
}

Gradients Gradients::zeros_like(const ModelParams& params) {
  Gradients g;
  g.w_e = Matrix(params.w_e.rows(), params.w_e.cols());
  g.w_p = Matrix(params.w_p.rows(), params.w_p.cols());
  g.w_u = Matrix(params.w_u.rows(), params.w_u.cols());
  g.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& src = params.layers[l];
    g.layers[l].w_q = Matrix(src.w_q.rows(), src.w_q.cols());
    g.layers[l].w_k = Matrix(src.w_k.rows(), src.w_k.cols());
    g.layers[l].w_v = Matrix(src.w_v.rows(), src.w_v.cols());
    g.layers[l].w_1 = Matrix(src.w_1.rows(), src.w_1.cols());
    g.layers[l].w_2 = Matrix(src.w_2.rows(), src.w_2.cols());
  }
  return g;
}

void Gradients::add_scaled(const Gradients& other, double c) {
  w_e.add_scaled(other.w_e, c);
  w_p.add_scaled(other.w_p, c);
  w_u.add_scaled(other.w_u, c);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].w_q.add_scaled(other.layers[l].w_q, c);
    layers[l].w_k.add_scaled(other.layers[l].w_k, c);
    layers[l].w_v.add_scaled(other.layers[l].w_v, c);
    layers[l].w_1.add_scaled(other.layers[l].w_1, c);
    layers[l].w_2.add_scaled(other.layers[l].w_2, c);
  }
}

Example make_ar_example(const std::vector<int>& tokens) {
  if (tokens.size() < 2)
    throw std::invalid_argument("make_ar_example: need at least 2 tokens");
  Example ex;
  ex.inputs = tokens;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
    ex.targets.emplace_back(i, tokens[i + 1]);
  return ex;
}

std::pair<std::vector<int>, std::vector<std::size_t>> mask_tokens(
    const std::vector<int>& tokens, double rho, int mask_id, Rng& rng) {
  if (rho <= 0.0 || rho >= 1.0)
    throw std::invalid_argument("mask_tokens: rho must be in (0,1)");
  std::vector<int> masked = tokens;
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (rng.bernoulli(rho)) selected.push_back(i);
  if (selected.empty()) selected.push_back(rng.index(tokens.size()));
  for (std::size_t i : selected) masked[i] = mask_id;
  return {std::move(masked), std::move(selected)};
}

Example make_mlm_example(const std::vector<int>& tokens, double rho, int mask_id, Rng& rng) {
  auto [masked, positions] = mask_tokens(tokens, rho, mask_id, rng);
  Example ex;
  ex.inputs = std::move(masked);
  for (std::size_t i : positions) ex.targets.emplace_back(i, tokens[i]);
  return ex;
}

namespace {

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

// dRaw[i,j] = A[i,j] * (dA[i,j] - sum_k dA[i,k] A[i,k]); masked entries stay 0.
Matrix softmax_backward(const Matrix& attn, const Matrix& d_attn) {
  Matrix out(attn.rows(), attn.cols());
  for (std::size_t i = 0; i < attn.rows(); ++i) {
    double inner = 0.0;
    for (std::size_t k = 0; k < attn.cols(); ++k) inner += d_attn(i, k) * attn(i, k);
    for (std::size_t j = 0; j < attn.cols(); ++j)
      out(i, j) = attn(i, j) * (d_attn(i, j) - inner);
  }
  return out;
}

}  // namespace

std::pair<double, Gradients> loss_and_grads(const ModelParams& params,
                                            const ModelConfig& config,
                                            const std::vector<Example>& batch,
                                            Objective objective, BackwardTap* tap) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
  std::size_t total_targets = 0;
  for (const Example& ex : batch) total_targets += ex.targets.size();
  if (total_targets == 0)
    throw std::invalid_argument("loss_and_grads: batch has no prediction targets");

  const bool causal = objective == Objective::Autoregressive;
  const double inv_targets = 1.0 / static_cast<double>(total_targets);
  const std::size_t d = config.model_dim;
  const std::size_t dh = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Gradients grads = Gradients::zeros_like(params);
  double loss = 0.0;

  if (tap) {
    tap->attn_input.clear();
    tap->attn_delta.clear();
    tap->attn_input.resize(config.num_layers);
    tap->attn_delta.resize(config.num_layers);
  }

  for (const Example& ex : batch) {
    const ForwardTrace trace = forward(params, config, ex.inputs, causal);
    const std::size_t n = ex.inputs.size();

    // Softmax cross-entropy at the target positions.
    Matrix d_logits(n, config.vocab_size);
    for (const auto& [pos, target] : ex.targets) {
      const double* z = trace.logits.row_ptr(pos);
      double mx = z[0];
      for (std::size_t v = 1; v < config.vocab_size; ++v) mx = std::max(mx, z[v]);
      double sum = 0.0;
      for (std::size_t v = 0; v < config.vocab_size; ++v) sum += std::exp(z[v] - mx);
      const double log_sum = std::log(sum) + mx;
      loss += (log_sum - z[target]) * inv_targets;
      for (std::size_t v = 0; v < config.vocab_size; ++v)
        d_logits(pos, v) += std::exp(z[v] - log_sum) * inv_targets;
      d_logits(pos, static_cast<std::size_t>(target)) -= inv_targets;
    }

    grads.w_u += matmul(transpose(trace.final_embeddings), d_logits);
    Matrix dx = matmul(d_logits, transpose(params.w_u));

    for (std::size_t l = config.num_layers; l-- > 0;) {
      const LayerTrace& lt = trace.layers[l];
      const LayerParams& lp = params.layers[l];
      LayerParams& lg = grads.layers[l];

      // ffn: X^l = X-hat + gelu(X-hat W_1) W_2
      Matrix activated = lt.ffn_pre;
      for (double& v : activated.data()) v = gelu(v);
      lg.w_2 += matmul(transpose(activated), dx);
      Matrix d_hidden = matmul(dx, transpose(lp.w_2));
      for (std::size_t i = 0; i < d_hidden.size(); ++i)
        d_hidden.data()[i] *= gelu_prime(lt.ffn_pre.data()[i]);
      lg.w_1 += matmul(transpose(lt.attn_residual), d_hidden);
      Matrix d_residual = dx + matmul(d_hidden, transpose(lp.w_1));

      // attention: X-hat = X + concat_h(A_h V_h)
      Matrix d_input = d_residual;  // residual path
      Matrix delta_at_output(n, d);
      for (std::size_t h = 0; h < config.num_heads; ++h) {
        const std::size_t c0 = h * dh, c1 = (h + 1) * dh;
        const Matrix d_out = col_slice(d_residual, c0, c1);
        const Matrix& attn = lt.head_attn[h];
        const Matrix& v = lt.head_v[h];
        const Matrix w_v_h = col_slice(lp.w_v, c0, c1);
        const Matrix w_q_h = col_slice(lp.w_q, c0, c1);
        const Matrix w_k_h = col_slice(lp.w_k, c0, c1);

        const Matrix d_attn = matmul(d_out, transpose(v));
        const Matrix d_v = matmul(transpose(attn), d_out);
        add_into_col_slice(lg.w_v, matmul(transpose(lt.input), d_v), c0);
        d_input += matmul(d_v, transpose(w_v_h));

        Matrix d_raw = softmax_backward(attn, d_attn);
        d_raw *= scale;
        const Matrix q = matmul(lt.input, w_q_h);
        const Matrix k = matmul(lt.input, w_k_h);
        const Matrix d_q = matmul(d_raw, k);
        const Matrix d_k = matmul(transpose(d_raw), q);
        add_into_col_slice(lg.w_q, matmul(transpose(lt.input), d_q), c0);
        add_into_col_slice(lg.w_k, matmul(transpose(lt.input), d_k), c0);
        d_input += matmul(d_q, transpose(w_q_h));
        d_input += matmul(d_k, transpose(w_k_h));

        if (tap) delta_at_output += matmul(d_out, transpose(w_v_h));
      }

      if (tap) {
        if (tap->attn_input[l].rows() == 0) {
          tap->attn_input[l] = lt.input;
          tap->attn_delta[l] = delta_at_output;
        } else {
          // Accumulate across batch items of equal length.
          tap->attn_delta[l] += delta_at_output;
        }
      }

      dx = std::move(d_input);
    }

    // embeddings: X^0 = U W_e + W_p
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t tok = static_cast<std::size_t>(ex.inputs[i]);
      for (std::size_t j = 0; j < d; ++j) {
        grads.w_e(tok, j) += dx(i, j);
        grads.w_p(i, j) += dx(i, j);
      }
    }
  }

  return {loss, std::move(grads)};
}

CharTokenizer char_tokenizer(const std::string& text) {
  if (text.empty()) throw std::invalid_argument("char_tokenizer: empty corpus");
  std::set<unsigned char> distinct(text.begin(), text.end());
  CharTokenizer tok;
  tok.alphabet.assign(distinct.begin(), distinct.end());
  std::vector<int> byte_to_id(256, -1);
  for (std::size_t i = 0; i < tok.alphabet.size(); ++i)
    byte_to_id[tok.alphabet[i]] = static_cast<int>(i);
  tok.ids.reserve(text.size());
  for (unsigned char c : text) tok.ids.push_back(byte_to_id[c]);
  tok.mask_id = static_cast<int>(tok.alphabet.size());
  tok.vocab_size = tok.mask_id + 1;
  return tok;
}

std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  constexpr std::size_t kAlphabet = 16;
  const char letters[kAlphabet + 1] = "abcdefghijklmnop";
  Rng table_rng = Rng(seed).fork(11);
  // fixed successor table indexed by the previous two characters
  std::vector<std::size_t> table(kAlphabet * kAlphabet);
  for (auto& t : table) t = table_rng.index(kAlphabet);
  Rng stream = Rng(seed).fork(12);
  std::string out;
  out.reserve(bytes);
  std::size_t c1 = stream.index(kAlphabet), c2 = stream.index(kAlphabet);
  for (std::size_t i = 0; i < bytes; ++i) {
    const std::size_t next = stream.bernoulli(0.1) ? stream.index(kAlphabet)
                                                   : table[c1 * kAlphabet + c2];
    out.push_back(letters[next]);
    c1 = c2;
    c2 = next;
  }
  return out;
}

std::vector<std::vector<int>> make_windows(const std::vector<int>& ids, std::size_t n) {
  std::vector<std::vector<int>> windows;
  for (std::size_t start = 0; start + n <= ids.size(); start += n)
    windows.emplace_back(ids.begin() + start, ids.begin() + start + n);
  return windows;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t num_windows,
                                                   std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(num_windows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = num_windows; i > 1; --i)
    std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < num_windows; start += batch_size) {
    const std::size_t end = std::min(start + batch_size, num_windows);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

namespace {

struct AdamState {
  Gradients m, v;
  std::size_t t = 0;
};

void apply_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v,
                  const OptimizerConfig& opt, std::size_t t) {
  if (opt.kind == OptimizerKind::Sgd) {
    param.add_scaled(grad, -opt.lr);
    return;
  }
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data()[i];
    m.data()[i] = opt.beta1 * m.data()[i] + (1.0 - opt.beta1) * g;
    v.data()[i] = opt.beta2 * v.data()[i] + (1.0 - opt.beta2) * g * g;
    const double mhat = m.data()[i] / bc1;
    const double vhat = v.data()[i] / bc2;
    param.data()[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

void optimizer_step(ModelParams& params, const Gradients& grads, AdamState& state,
                    const OptimizerConfig& opt) {
  ++state.t;
  apply_update(params.w_e, grads.w_e, state.m.w_e, state.v.w_e, opt, state.t);
  apply_update(params.w_p, grads.w_p, state.m.w_p, state.v.w_p, opt, state.t);
  apply_update(params.w_u, grads.w_u, state.m.w_u, state.v.w_u, opt, state.t);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    apply_update(params.layers[l].w_q, grads.layers[l].w_q, state.m.layers[l].w_q,
                 state.v.layers[l].w_q, opt, state.t);
    apply_update(params.layers[l].w_k, grads.layers[l].w_k, state.m.layers[l].w_k,
                 state.v.layers[l].w_k, opt, state.t);
    apply_update(params.layers[l].w_v, grads.layers[l].w_v, state.m.layers[l].w_v,
                 state.v.layers[l].w_v, opt, state.t);
    apply_update(params.layers[l].w_1, grads.layers[l].w_1, state.m.layers[l].w_1,
                 state.v.layers[l].w_1, opt, state.t);
    apply_update(params.layers[l].w_2, grads.layers[l].w_2, state.m.layers[l].w_2,
                 state.v.layers[l].w_2, opt, state.t);
  }
}

ScoreReport score_params(const ModelParams& params, double gamma) {
  std::vector<Matrix> wqk;
  wqk.reserve(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    wqk.push_back(compose_wqk(params, l));
  return layer_summary(wqk, gamma);
}

}  // namespace

TrainingLog train(ModelParams& params, const ModelConfig& model_config,
                  const std::vector<int>& corpus_ids, int mask_id,
                  const TrainingConfig& config, const TrainCallback& callback) {
  config.validate();
  const auto windows = make_windows(corpus_ids, config.seq_len);
  if (windows.empty())
    throw std::invalid_argument("train: corpus shorter than one window");

  Rng shuffle_rng = Rng(config.seed).fork(1);
  Rng mask_rng = Rng(config.seed).fork(2);

  TrainingLog log;
  log.steps_per_epoch = (windows.size() + config.batch_size - 1) / config.batch_size;

  auto build_batch = [&](const std::vector<std::size_t>& idxs) {
    std::vector<Example> batch;
    batch.reserve(idxs.size());
    for (std::size_t idx : idxs) {
      if (config.objective == Objective::Autoregressive)
        batch.push_back(make_ar_example(windows[idx]));
      else
        batch.push_back(make_mlm_example(windows[idx], config.mask_prob, mask_id, mask_rng));
    }
    return batch;
  };

  auto emit = [&](std::size_t step, double mean_loss) {
    Checkpoint cp{step, mean_loss, score_params(params, config.gamma)};
    log.checkpoints.push_back(cp);
    if (callback) {
      const ModelParams snapshot = params;  // deep copy by contract
      callback(log.checkpoints.back(), snapshot);
    }
  };

  // Initialization checkpoint: evaluation only, no update.
  {
    auto batches = make_batches(windows.size(), config.batch_size, shuffle_rng);
    const auto [loss0, g0] = loss_and_grads(params, model_config, build_batch(batches[0]),
                                            config.objective);
    (void)g0;
    emit(0, loss0);
  }

  AdamState state{Gradients::zeros_like(params), Gradients::zeros_like(params), 0};
  double window_loss = 0.0;
  std::size_t window_count = 0;
  std::size_t step = 0;

  while (step < config.steps) {
    auto batches = make_batches(windows.size(), config.batch_size, shuffle_rng);
    for (const auto& batch_idxs : batches) {
      if (step >= config.steps) break;
      const auto [loss, grads] =
          loss_and_grads(params, model_config, build_batch(batch_idxs), config.objective);
      optimizer_step(params, grads, state, config.optimizer);
      ++step;
      window_loss += loss;
      ++window_count;
      if (config.score_every > 0 &&
          (step % config.score_every == 0 || step == config.steps)) {
        emit(step, window_loss / static_cast<double>(window_count));
        window_loss = 0.0;
        window_count = 0;
      }
    }
  }
  return log;
}

}  // namespace attngeom
