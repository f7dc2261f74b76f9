#include "attngeom/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "attngeom/gradient_lab.hpp"
#include "attngeom/scores.hpp"

namespace attngeom {

bool SuiteResult::passed() const {
  for (const auto& p : properties)
    if (!p.passed) return false;
  return true;
}

std::size_t worker_count() {
  const char* env = std::getenv("ATTN_GEOM_THREADS");
  if (env) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

PropertyResult check(const std::string& name, bool passed, double margin,
                     const std::string& detail) {
  return {name, passed, margin, detail};
}

// ---- scores -------------------------------------------------------------

SuiteResult suite_scores(std::uint64_t seed) {
  SuiteResult suite{"scores", {}, };
  Rng rng = Rng(seed).fork(101);

  double worst_bound = 1.0;  // min distance of s, d from the [-1, 1] walls
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 4 + rng.index(29);
    const Matrix m = rng.gaussian_matrix(n, n);
    const double s = symmetry_score(m);
    const double d = directionality_score(m, 2.0);
    worst_bound = std::min({worst_bound, 1.0 - std::abs(s), 1.0 - std::abs(d)});
    if (std::abs(s) > 1.0 || std::abs(d) > 1.0) worst_bound = -1.0;
  }
  suite.properties.push_back(check("scores_in_unit_interval", worst_bound >= 0.0,
                                   worst_bound, "min wall distance " + fmt(worst_bound)));

  Matrix g = rng.gaussian_matrix(12, 12);
  auto [ms, mn] = toeplitz_split(g);
  const double s_sym = symmetry_score(ms);
  const double s_skew = symmetry_score(mn);
  suite.properties.push_back(check("symmetric_part_scores_one",
                                   std::abs(s_sym - 1.0) < 1e-12,
                                   1e-12 - std::abs(s_sym - 1.0), "s = " + fmt(s_sym)));
  suite.properties.push_back(check("skew_part_scores_minus_one",
                                   std::abs(s_skew + 1.0) < 1e-12,
                                   1e-12 - std::abs(s_skew + 1.0), "s = " + fmt(s_skew)));

  double max_flip = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix m = rng.gaussian_matrix(10, 10);
    max_flip = std::max(max_flip, std::abs(directionality_score(m, 2.0) +
                                           directionality_score(transpose(m), 2.0)));
  }
  suite.properties.push_back(check("transpose_flips_d_sign", max_flip < 1e-12,
                                   1e-12 - max_flip,
                                   "max |d(M) + d(M^T)| = " + fmt(max_flip)));

  Matrix dominant(16, 16);
  for (std::size_t j = 0; j < 16; ++j) dominant(0, j) = 1.0;
  const double d_dom = directionality_score(dominant, 2.0);
  suite.properties.push_back(check("dominant_row_scores_plus_one",
                                   std::abs(d_dom - 1.0) < 1e-12,
                                   1e-12 - std::abs(d_dom - 1.0), "d = " + fmt(d_dom)));
  return suite;
}

// ---- gradients ----------------------------------------------------------

SuiteResult suite_gradients(std::uint64_t seed) {
  SuiteResult suite{"gradients", {}};
  ModelConfig config;
  config.num_layers = 2;
  config.num_heads = 2;
  config.model_dim = 8;
  config.ff_dim = 12;
  config.vocab_size = 11;
  config.max_seq = 6;
  for (Objective obj : {Objective::Autoregressive, Objective::Bidirectional}) {
    const double err = gradcheck_max_rel_error(config, obj, seed);
    const char* name = obj == Objective::Autoregressive ? "gradcheck_autoregressive"
                                                        : "gradcheck_bidirectional";
    suite.properties.push_back(
        check(name, err < 1e-5, 1e-5 - err, "max relative error " + fmt(err)));
  }

  // rank-1 oracle: dual paths agree and rank stays below N
  Rng rng = Rng(seed).fork(202);
  bool dual_ok = true;
  bool rank_ok = true;
  for (int trial = 0; trial < 20 && dual_ok; ++trial) {
    const std::size_t n = 3 + rng.index(5);
    const std::size_t d = n + 2 + rng.index(4);
    const Matrix x = rng.gaussian_matrix(n, d);
    const Matrix deltas = rng.gaussian_matrix(n, d);
    const Matrix wqk = rng.gaussian_matrix(d, d);
    std::vector<std::vector<std::size_t>> cond(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) cond[i].push_back(j);
    try {
      const Matrix grad = linear_attention_grad(x, wqk, deltas, cond);
      if (numerical_rank(grad) > n) rank_ok = false;
    } catch (const std::logic_error&) {
      dual_ok = false;
    }
  }
  suite.properties.push_back(check("rank1_dual_path_agreement", dual_ok,
                                   dual_ok ? 1.0 : -1.0,
                                   dual_ok ? "both paths agree" : "path mismatch"));
  suite.properties.push_back(check("gradient_rank_bounded_by_n", dual_ok && rank_ok,
                                   dual_ok && rank_ok ? 1.0 : -1.0,
                                   rank_ok ? "rank <= N on all instances" : "rank bound violated"));
  return suite;
}

// ---- ratios -------------------------------------------------------------

SuiteResult suite_ratios(std::uint64_t seed) {
  SuiteResult suite{"ratios", {}};
  const std::vector<double> betas{0.7, -1.3, 0.4};

  EmbeddingDistribution iso{5, Matrix::identity(5)};
  const auto r_iso = norm_ratio_mc(iso, betas, 2, 3, UpdateRole::Context, 200000, seed);
  const double iso_err = std::abs(r_iso.mc_ratio - 1.0);
  suite.properties.push_back(check("isotropic_ratio_is_one", iso_err < 0.02,
                                   0.02 - iso_err, "mc " + fmt(r_iso.mc_ratio)));

  EmbeddingDistribution aniso{5, Matrix::identity(5)};
  aniso.covariance(0, 0) = 4.0;
  const auto r = norm_ratio_mc(aniso, betas, 1, 2, UpdateRole::Context, 200000, seed);
  const double rel = std::abs(r.mc_ratio - r.closed_form) / r.closed_form;
  suite.properties.push_back(check("anisotropic_ratio_matches_closed_form",
                                   std::abs(r.closed_form - 1.6) < 1e-12 && rel < 0.05,
                                   0.05 - rel,
                                   "closed " + fmt(r.closed_form) + ", mc " + fmt(r.mc_ratio)));

  const auto r_pred = norm_ratio_mc(aniso, betas, 2, 1, UpdateRole::Prediction, 200000, seed);
  const double pred_expected = 5.0 * 1.0 / 8.0;  // d Sigma_kk / Tr(Sigma)
  const double pred_rel = std::abs(r_pred.mc_ratio - pred_expected) / pred_expected;
  suite.properties.push_back(check("prediction_ratio_matches_corollary",
                                   std::abs(r_pred.closed_form - pred_expected) < 1e-12 &&
                                       pred_rel < 0.05,
                                   0.05 - pred_rel, "mc " + fmt(r_pred.mc_ratio)));

  // convergence at the 1/sqrt(trials) rate: error shrinks with 16x the trials
  const auto coarse = norm_ratio_mc(aniso, betas, 1, 2, UpdateRole::Context, 500, seed + 1);
  const auto fine = norm_ratio_mc(aniso, betas, 1, 2, UpdateRole::Context, 8000, seed + 1);
  const double e_coarse = std::abs(coarse.mc_ratio - coarse.closed_form);
  const double e_fine = std::abs(fine.mc_ratio - fine.closed_form);
  suite.properties.push_back(check("mc_error_shrinks_with_trials", e_fine < e_coarse + 0.02,
                                   e_coarse + 0.02 - e_fine,
                                   "coarse " + fmt(e_coarse) + ", fine " + fmt(e_fine)));
  return suite;
}

// ---- counting -----------------------------------------------------------

SuiteResult suite_counting(std::uint64_t seed) {
  SuiteResult suite{"counting", {}};
  Rng rng = Rng(seed).fork(303);

  double max_bidir_dev = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> probs(4 + rng.index(12));
    for (double& p : probs) p = rng.uniform();
    const auto res = counting_ratio(probs, CountingMode::Bidirectional);
    max_bidir_dev = std::max(max_bidir_dev, std::abs(res.ratio - 1.0));
  }
  suite.properties.push_back(check("bidirectional_ratio_exactly_one", max_bidir_dev == 0.0,
                                   max_bidir_dev == 0.0 ? 1.0 : -max_bidir_dev,
                                   "max deviation " + fmt(max_bidir_dev)));

  const std::vector<double> uniform(10, 0.1);
  const auto u = counting_ratio(uniform, CountingMode::Autoregressive);
  suite.properties.push_back(check("uniform_ar_ratio_is_one", std::abs(u.ratio - 1.0) < 1e-12,
                                   1e-12 - std::abs(u.ratio - 1.0), "ratio " + fmt(u.ratio)));

  std::vector<double> at2(10, 0.0);
  at2[1] = 1.0;
  const auto c = counting_ratio(at2, CountingMode::Autoregressive);
  const double mc = counting_ratio_mc(at2, 100000, seed);
  const double mc_rel = std::abs(mc - c.ratio) / c.ratio;
  suite.properties.push_back(check("ar_closed_form_matches_mc",
                                   std::abs(c.ratio - 8.0) < 1e-12 &&
                                       std::abs(c.remark_form - 8.0) < 1e-12 && mc_rel < 0.02,
                                   0.02 - mc_rel, "closed " + fmt(c.ratio) + ", mc " + fmt(mc)));

  std::vector<double> at1(10, 0.0);
  at1[0] = 1.0;
  const auto sentinel = counting_ratio(at1, CountingMode::Autoregressive);
  suite.properties.push_back(check("degenerate_ar_gives_infinite_sentinel",
                                   sentinel.infinite && std::isinf(sentinel.ratio),
                                   sentinel.infinite ? 1.0 : -1.0,
                                   "infinite = " + std::string(sentinel.infinite ? "yes" : "no")));
  return suite;
}

// ---- tails --------------------------------------------------------------

SuiteResult suite_tails(std::uint64_t seed) {
  SuiteResult suite{"tails", {}};
  const Sampler wide = [](Rng& r) { return 2.0 * r.gaussian(); };
  const Sampler narrow = [](Rng& r) { return r.gaussian(); };
  for (double z : {1.5, 2.0, 3.0}) {
    const auto res = tail_prob_check(wide, narrow, 0.0, 2.0, 1.0, z, 100000, seed);
    const double margin = res.p_a - res.p_b;
    std::ostringstream name;
    name << "tail_dominance_z_" << z;
    suite.properties.push_back(check(name.str(), z > res.bound && margin >= 0.0, margin,
                                     "p_a " + fmt(res.p_a) + ", p_b " + fmt(res.p_b)));
  }
  return suite;
}

}  // namespace

double gradcheck_max_rel_error(const ModelConfig& config, Objective objective,
                               std::uint64_t seed) {
  ModelParams params = init_params(config, InitScheme::IidGaussian, 0.3, seed);
  Rng rng = Rng(seed).fork(404);

  const std::size_t n = std::min<std::size_t>(config.max_seq, 8);
  std::vector<int> tokens(n);
  for (int& t : tokens) t = static_cast<int>(rng.index(config.vocab_size - 1));
  std::vector<Example> batch;
  if (objective == Objective::Autoregressive) {
    batch.push_back(make_ar_example(tokens));
  } else {
    const int mask_id = static_cast<int>(config.vocab_size) - 1;
    batch.push_back(make_mlm_example(tokens, 0.3, mask_id, rng));
  }

  const auto [loss, grads] = loss_and_grads(params, config, batch, objective);
  (void)loss;

  const double h = 1e-5;
  double max_rel = 0.0;
  auto check_tensor = [&](Matrix& p, const Matrix& g) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + h;
      const double up = loss_and_grads(params, config, batch, objective).first;
      p.data()[i] = saved - h;
      const double down = loss_and_grads(params, config, batch, objective).first;
      p.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = g.data()[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      max_rel = std::max(max_rel, rel);
    }
  };

  check_tensor(params.w_e, grads.w_e);
  check_tensor(params.w_p, grads.w_p);
  check_tensor(params.w_u, grads.w_u);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    check_tensor(params.layers[l].w_q, grads.layers[l].w_q);
    check_tensor(params.layers[l].w_k, grads.layers[l].w_k);
    check_tensor(params.layers[l].w_v, grads.layers[l].w_v);
    check_tensor(params.layers[l].w_1, grads.layers[l].w_1);
    check_tensor(params.layers[l].w_2, grads.layers[l].w_2);
  }
  return max_rel;
}

std::vector<SuiteResult> run_verification(const std::string& suite, std::uint64_t seed) {
  std::vector<SuiteResult> out;
  const bool all = suite == "all";
  if (all || suite == "scores") out.push_back(suite_scores(seed));
  if (all || suite == "gradients") out.push_back(suite_gradients(seed));
  if (all || suite == "ratios") out.push_back(suite_ratios(seed));
  if (all || suite == "counting") out.push_back(suite_counting(seed));
  if (all || suite == "tails") out.push_back(suite_tails(seed));
  if (out.empty())
    throw std::invalid_argument("unknown verification suite \"" + suite + "\"");
  return out;
}

}  // namespace attngeom
