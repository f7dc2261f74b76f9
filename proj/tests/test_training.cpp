#include <doctest.h>

#include <cmath>

#include "attngeom/gradient_lab.hpp"
#include "attngeom/training.hpp"
#include "attngeom/verify.hpp"

using namespace attngeom;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.model_dim = 8;
  c.ff_dim = 10;
  c.vocab_size = 7;
  c.max_seq = 6;
  return c;
}

}  // namespace

TEST_CASE("make_ar_example shifts targets by one") {
  const Example ex = make_ar_example({3, 1, 4, 1});
  REQUIRE(ex.targets.size() == 3);
  CHECK(ex.targets[0] == std::pair<std::size_t, int>{0, 1});
  CHECK(ex.targets[2] == std::pair<std::size_t, int>{2, 1});
  CHECK_THROWS_AS(make_ar_example({1}), std::invalid_argument);
}

TEST_CASE("mask_tokens masks at least one position and is deterministic") {
  const std::vector<int> tokens{0, 1, 2, 3, 4, 5};
  Rng a(10), b(10);
  const auto [ma, pa] = mask_tokens(tokens, 0.01, 6, a);  // tiny rho: forced pick
  CHECK(!pa.empty());
  for (std::size_t i : pa) CHECK(ma[i] == 6);
  const auto [mb, pb] = mask_tokens(tokens, 0.01, 6, b);
  CHECK(pa == pb);
  Rng c(11);
  CHECK_THROWS_AS(mask_tokens(tokens, 0.0, 6, c), std::invalid_argument);
}

TEST_CASE("make_mlm_example targets recover the original tokens") {
  const std::vector<int> tokens{0, 1, 2, 3, 4, 5};
  Rng rng(12);
  const Example ex = make_mlm_example(tokens, 0.5, 6, rng);
  CHECK(!ex.targets.empty());
  for (const auto& [pos, tgt] : ex.targets) {
    CHECK(ex.inputs[pos] == 6);
    CHECK(tgt == tokens[pos]);
  }
  // unmasked positions untouched
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (ex.inputs[i] != 6) CHECK(ex.inputs[i] == tokens[i]);
}

TEST_CASE("analytic gradients match finite differences on a tiny model") {
  const ModelConfig c = tiny_config();
  CHECK(gradcheck_max_rel_error(c, Objective::Autoregressive, 21) < 1e-5);
  CHECK(gradcheck_max_rel_error(c, Objective::Bidirectional, 22) < 1e-5);
}

TEST_CASE("backward tap exposes per-layer attention inputs and deltas") {
  const ModelConfig c = tiny_config();
  const ModelParams p = init_params(c, InitScheme::IidGaussian, 0.3, 23);
  const std::vector<int> tokens{1, 2, 3, 4, 5};
  BackwardTap tap;
  const auto [loss, grads] =
      loss_and_grads(p, c, {make_ar_example(tokens)}, Objective::Autoregressive, &tap);
  CHECK(std::isfinite(loss));
  REQUIRE(tap.attn_input.size() == 1);
  REQUIRE(tap.attn_delta.size() == 1);
  CHECK(tap.attn_input[0].rows() == tokens.size());
  CHECK(tap.attn_delta[0].cols() == c.model_dim);
  // tap data feeds the rank-1 oracle: causal conditioning sets
  std::vector<std::vector<std::size_t>> cond(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j) cond[i].push_back(j);
  const Matrix g = linear_attention_grad(tap.attn_input[0], compose_wqk(p, 0),
                                         tap.attn_delta[0], cond);
  CHECK(g.rows() == c.model_dim);
  CHECK(numerical_rank(g) <= tokens.size());
}

TEST_CASE("loss decreases over a short training run") {
  const std::string text = synthetic_corpus(4096, 31);
  const CharTokenizer tok = char_tokenizer(text);
  ModelConfig mc;
  mc.num_layers = 1;
  mc.num_heads = 1;
  mc.model_dim = 16;
  mc.ff_dim = 24;
  mc.vocab_size = tok.vocab_size;
  mc.max_seq = 16;
  mc.causal = true;
  ModelParams params = init_params(mc, InitScheme::IidGaussian, 0.1, 31);
  TrainingConfig tc;
  tc.objective = Objective::Autoregressive;
  tc.optimizer.lr = 3e-3;
  tc.steps = 60;
  tc.batch_size = 8;
  tc.seq_len = 16;
  tc.seed = 31;
  tc.score_every = 30;
  const TrainingLog log = train(params, mc, tok.ids, tok.mask_id, tc);
  REQUIRE(log.checkpoints.size() >= 2);
  CHECK(log.checkpoints.back().loss < log.checkpoints.front().loss);
}

TEST_CASE("steps = 0 leaves only the initialization checkpoint") {
  const std::string text = synthetic_corpus(2048, 32);
  const CharTokenizer tok = char_tokenizer(text);
  ModelConfig mc = tiny_config();
  mc.vocab_size = tok.vocab_size;
  mc.max_seq = 8;
  ModelParams params = init_params(mc, InitScheme::IidGaussian, 0.1, 32);
  TrainingConfig tc;
  tc.steps = 0;
  tc.seq_len = 8;
  tc.seed = 32;
  const TrainingLog log = train(params, mc, tok.ids, tok.mask_id, tc);
  REQUIRE(log.checkpoints.size() == 1);
  CHECK(log.checkpoints[0].step == 0);
}

TEST_CASE("training is deterministic per seed") {
  const std::string text = synthetic_corpus(2048, 33);
  const CharTokenizer tok = char_tokenizer(text);
  ModelConfig mc = tiny_config();
  mc.vocab_size = tok.vocab_size;
  mc.max_seq = 8;
  TrainingConfig tc;
  tc.steps = 20;
  tc.seq_len = 8;
  tc.seed = 33;
  tc.score_every = 20;
  ModelParams p1 = init_params(mc, InitScheme::IidGaussian, 0.1, 33);
  ModelParams p2 = init_params(mc, InitScheme::IidGaussian, 0.1, 33);
  const TrainingLog l1 = train(p1, mc, tok.ids, tok.mask_id, tc);
  const TrainingLog l2 = train(p2, mc, tok.ids, tok.mask_id, tc);
  CHECK(l1.checkpoints.back().loss == l2.checkpoints.back().loss);
  CHECK(frobenius_norm(p1.w_e - p2.w_e) == 0.0);
}

TEST_CASE("char_tokenizer builds a byte vocabulary plus mask token") {
  const CharTokenizer tok = char_tokenizer("abab");
  CHECK(tok.vocab_size == 3);
  CHECK(tok.mask_id == 2);
  CHECK(tok.ids == std::vector<int>{0, 1, 0, 1});
  CHECK_THROWS_AS(char_tokenizer(""), std::invalid_argument);
}

TEST_CASE("make_windows yields floor(len/n) disjoint windows") {
  std::vector<int> ids(10);
  for (int i = 0; i < 10; ++i) ids[i] = i;
  const auto windows = make_windows(ids, 3);
  REQUIRE(windows.size() == 3);
  CHECK(windows[2] == std::vector<int>{6, 7, 8});
}

TEST_CASE("make_batches partitions all indices exactly once") {
  Rng rng(34);
  const auto batches = make_batches(10, 4, rng);
  REQUIRE(batches.size() == 3);
  std::vector<bool> seen(10, false);
  for (const auto& b : batches)
    for (std::size_t i : b) {
      CHECK_FALSE(seen[i]);
      seen[i] = true;
    }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("synthetic corpus is deterministic with a 16-letter alphabet") {
  const std::string a = synthetic_corpus(1000, 7);
  const std::string b = synthetic_corpus(1000, 7);
  CHECK(a == b);
  CHECK(a.size() == 1000);
  for (char ch : a) {
    CHECK(ch >= 'a');
    CHECK(ch <= 'p');
  }
  CHECK(synthetic_corpus(1000, 8) != a);
}
