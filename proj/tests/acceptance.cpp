// Acceptance suite: ten end-to-end checks, one PASS/FAIL line each.
// Exits nonzero if any check fails.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <mutex>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "attngeom/gradient_lab.hpp"
#include "attngeom/inspector.hpp"
#include "attngeom/scores.hpp"
#include "attngeom/training.hpp"
#include "attngeom/transformer.hpp"
#include "attngeom/verify.hpp"

using namespace attngeom;

namespace {

int failures = 0;

void report(int idx, const std::string& name, bool passed, const std::string& detail) {
  std::cout << (passed ? "PASS" : "FAIL") << " criterion " << idx << ": " << name;
  if (!detail.empty()) std::cout << " (" << detail << ")";
  std::cout << std::endl;
  if (!passed) ++failures;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(5);
  os << v;
  return os.str();
}

// ---- 1: score statistics on iid gaussian ensembles ----------------------

void criterion_1() {
  bool in_range = true;
  bool mean_s_ok = true;
  bool mean_d_ok = true;
  std::string detail;
  Rng rng(1001);
  for (std::size_t n : {std::size_t{16}, std::size_t{64}, std::size_t{256}}) {
    const int draws = 1000;
    double sum_s = 0.0, sq_s = 0.0, sum_d = 0.0, sq_d = 0.0;
    for (int t = 0; t < draws; ++t) {
      const Matrix m = rng.gaussian_matrix(n, n);
      const double s = symmetry_score(m);
      const double d = directionality_score(m, 2.0);
      if (std::abs(s) > 1.0 || std::abs(d) > 1.0) in_range = false;
      sum_s += s;
      sq_s += s * s;
      sum_d += d;
      sq_d += d * d;
    }
    const double mean_s = sum_s / draws;
    const double se_s = std::sqrt((sq_s / draws - mean_s * mean_s) / draws);
    const double mean_d = sum_d / draws;
    const double se_d = std::sqrt((sq_d / draws - mean_d * mean_d) / draws);
    const double target = 8.0 / static_cast<double>(n);
    if (std::abs(mean_s - target) > 3.0 * se_s) mean_s_ok = false;
    if (std::abs(mean_d) > 3.0 * se_d) mean_d_ok = false;
    detail += "n=" + std::to_string(n) + ": mean_s " + fmt(mean_s) + " vs 8/n " +
              fmt(target) + " (1/n " + fmt(1.0 / static_cast<double>(n)) + "), mean_d " +
              fmt(mean_d) + "; ";
  }
  report(1, "gaussian ensemble score statistics (mean s vs 8/n, mean d vs 0)",
         in_range && mean_s_ok && mean_d_ok, detail);
  if (!mean_s_ok)
    std::cout << "  note: the measured means track 1/n, not 8/n; the per-n values above"
                 " show the measured mean next to both references" << std::endl;
}

// ---- 2: exact score fixtures ---------------------------------------------

void criterion_2() {
  Rng rng(1002);
  const Matrix g = rng.gaussian_matrix(10, 10);
  const auto [ms, mn] = toeplitz_split(g);
  bool ok = std::abs(symmetry_score(ms) - 1.0) <= 1e-12 &&
            std::abs(symmetry_score(mn) + 1.0) <= 1e-12;

  Matrix dominant(16, 16);
  for (std::size_t j = 0; j < 16; ++j) dominant(0, j) = 1.0;
  ok = ok && std::abs(directionality_score(dominant, 2.0) - 1.0) <= 1e-12;

  double max_flip = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Matrix m = rng.gaussian_matrix(9, 9);
    max_flip = std::max(max_flip, std::abs(directionality_score(m, 2.0) +
                                           directionality_score(transpose(m), 2.0)));
  }
  ok = ok && max_flip <= 1e-12;
  report(2, "exact fixtures: s=+1/-1, dominant-row d=+1, transpose flips d", ok,
         "max |d(M)+d(M^T)| = " + fmt(max_flip));
}

// ---- 3: gradcheck --------------------------------------------------------

void criterion_3() {
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.model_dim = 16;
  c.ff_dim = 32;
  c.vocab_size = 20;
  c.max_seq = 8;
  const double err_ar = gradcheck_max_rel_error(c, Objective::Autoregressive, 1003);
  const double err_mlm = gradcheck_max_rel_error(c, Objective::Bidirectional, 1004);
  report(3, "gradcheck vs central finite differences on both objectives",
         err_ar < 1e-5 && err_mlm < 1e-5,
         "max rel err: ar " + fmt(err_ar) + ", mlm " + fmt(err_mlm));
}

// ---- 4: rank-1 gradient oracle -------------------------------------------

void criterion_4() {
  Rng rng(1005);
  bool ok = true;
  std::string detail = "50 instances, dual paths within 1e-12";
  for (int t = 0; t < 50 && ok; ++t) {
    const std::size_t n = 3 + rng.index(6);
    const std::size_t d = n + 2 + rng.index(4);
    const Matrix x = rng.gaussian_matrix(n, d);
    const Matrix deltas = rng.gaussian_matrix(n, d);
    const Matrix wqk = rng.gaussian_matrix(d, d);
    std::vector<std::vector<std::size_t>> cond(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) cond[i].push_back(j);
    try {
      const Matrix grad = linear_attention_grad(x, wqk, deltas, cond);
      if (numerical_rank(grad) > n) {
        ok = false;
        detail = "rank exceeded N";
      }
    } catch (const std::logic_error& e) {
      ok = false;
      detail = e.what();
    }
  }
  report(4, "rank-1 gradient oracle: dual-path agreement and rank <= N", ok, detail);
}

// ---- 5: asymmetric-growth ratio ------------------------------------------

void criterion_5() {
  EmbeddingDistribution aniso{5, Matrix::identity(5)};
  aniso.covariance(0, 0) = 4.0;
  const std::vector<double> betas{0.9, -1.2, 0.5};
  const auto r = norm_ratio_mc(aniso, betas, 1, 2, UpdateRole::Context, 10000, 1006);
  const double rel = std::abs(r.mc_ratio - 1.6) / 1.6;

  EmbeddingDistribution iso{5, Matrix::identity(5)};
  const auto ri = norm_ratio_mc(iso, betas, 0, 4, UpdateRole::Context, 10000, 1007);
  const double iso_dev = std::abs(ri.mc_ratio - 1.0);

  report(5, "asymmetric-growth ratio: diag(4,1,1,1,1) -> 1.6, isotropic -> 1",
         std::abs(r.closed_form - 1.6) <= 1e-12 && rel < 0.05 && iso_dev < 0.02,
         "mc " + fmt(r.mc_ratio) + " vs 1.6; isotropic mc " + fmt(ri.mc_ratio));
}

// ---- 6: counting ratios ---------------------------------------------------

void criterion_6() {
  Rng rng(1008);
  bool bidir_exact = true;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> probs(4 + rng.index(12));
    for (double& p : probs) p = rng.uniform();
    if (counting_ratio(probs, CountingMode::Bidirectional).ratio != 1.0)
      bidir_exact = false;
  }

  std::vector<double> probs(10);
  for (double& p : probs) p = 0.05 + rng.uniform();
  const auto closed = counting_ratio(probs, CountingMode::Autoregressive);
  const double mc = counting_ratio_mc(probs, 100000, 1009);
  const double mc_rel = std::abs(mc - closed.ratio) / closed.ratio;

  const std::vector<double> uniform(10, 0.1);
  const double u = counting_ratio(uniform, CountingMode::Autoregressive).ratio;

  report(6, "counting ratios: bidirectional == 1, AR closed form vs MC, uniform == 1",
         bidir_exact && mc_rel < 0.02 && std::abs(u - 1.0) <= 1e-12,
         "closed " + fmt(closed.ratio) + ", mc " + fmt(mc) + ", uniform " + fmt(u));
}

// ---- 7 & 8: toy-scale training trends -------------------------------------

struct RunResult {
  double final_median_s = 0.0;
  double final_median_d = 0.0;
  double final_loss = 0.0;
  double init_median_s = 0.0;
  TrainingLog log;
};

RunResult run_training(Objective objective, InitScheme init, std::uint64_t seed,
                       const std::vector<int>& corpus, int mask_id,
                       std::size_t vocab_size) {
  ModelConfig mc;
  mc.num_layers = 2;
  mc.num_heads = 2;
  mc.model_dim = 32;
  mc.ff_dim = 64;
  mc.vocab_size = vocab_size;
  mc.max_seq = 64;
  mc.causal = objective == Objective::Autoregressive;

  TrainingConfig tc;
  tc.objective = objective;
  tc.mask_prob = 0.15;
  tc.optimizer.lr = 1e-3;
  tc.steps = 2000;
  tc.batch_size = 8;
  tc.seq_len = 64;
  tc.seed = seed;
  tc.score_every = 50;  // quarter-epoch resolution for the reach-epoch measure
  tc.gamma = 2.0;

  ModelParams params = init_params(mc, init, 0.1, seed);
  RunResult r;
  r.log = train(params, mc, corpus, mask_id, tc);
  r.init_median_s = r.log.checkpoints.front().scores.median_s;
  const auto& last = r.log.checkpoints.back();
  r.final_median_s = last.scores.median_s;
  r.final_median_d = last.scores.median_d;
  r.final_loss = last.loss;
  return r;
}

void criteria_7_and_8() {
  const std::string text = synthetic_corpus(102400, 7001);
  const CharTokenizer tok = char_tokenizer(text);
  const std::vector<std::uint64_t> seeds{11, 22, 33};

  struct Job {
    Objective objective;
    InitScheme init;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::uint64_t s : seeds) {
    jobs.push_back({Objective::Autoregressive, InitScheme::IidGaussian, s});
    jobs.push_back({Objective::Bidirectional, InitScheme::IidGaussian, s});
    jobs.push_back({Objective::Bidirectional, InitScheme::SymmetricQk, s});
  }

  std::vector<RunResult> results(jobs.size());
  const std::size_t workers = std::min(worker_count(), jobs.size());
  std::vector<std::future<void>> futures;
  std::size_t next = 0;
  for (std::size_t w = 0; w < workers; ++w)
    futures.push_back(std::async(std::launch::async, [&jobs, &results, &next, &tok]() {
      // static scheduling keeps the run deterministic regardless of timing
      while (true) {
        std::size_t idx;
        {
          static std::mutex m;
          std::lock_guard<std::mutex> lock(m);
          if (next >= jobs.size()) return;
          idx = next++;
        }
        results[idx] = run_training(jobs[idx].objective, jobs[idx].init, jobs[idx].seed,
                                    tok.ids, tok.mask_id,
                                    static_cast<std::size_t>(tok.vocab_size));
      }
    }));
  for (auto& f : futures) f.get();

  std::vector<double> ar_s, mlm_s;
  int d_more_negative = 0;
  std::string detail7;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const RunResult& ar = results[3 * i];
    const RunResult& mlm = results[3 * i + 1];
    ar_s.push_back(ar.final_median_s);
    mlm_s.push_back(mlm.final_median_s);
    if (ar.final_median_d < mlm.final_median_d) ++d_more_negative;
    detail7 += "seed " + std::to_string(seeds[i]) + ": s_mlm " + fmt(mlm.final_median_s) +
               " vs s_ar " + fmt(ar.final_median_s) + ", d_ar " + fmt(ar.final_median_d) +
               " vs d_mlm " + fmt(mlm.final_median_d) + "; ";
  }
  const double med_ar = percentile(ar_s, 50.0);
  const double med_mlm = percentile(mlm_s, 50.0);
  report(7, "toy-scale trends: MLM symmetry exceeds AR by >= 0.05, AR more column-dominant",
         med_mlm - med_ar >= 0.05 && d_more_negative >= 2,
         "median s: mlm " + fmt(med_mlm) + ", ar " + fmt(med_ar) + "; d more negative in " +
             std::to_string(d_more_negative) + "/3 seeds. " + detail7);

  int speedup_positive = 0;
  bool sym_init_all_one = true;
  std::string detail8;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const RunResult& iid = results[3 * i + 1];
    const RunResult& sym = results[3 * i + 2];
    for (const auto& ls : sym.log.checkpoints.front().scores.per_layer)
      if (std::abs(ls.s - 1.0) > 1e-12) sym_init_all_one = false;
    const double spe = static_cast<double>(sym.log.steps_per_epoch);
    const double total_epochs = 2000.0 / spe;
    double reach_epoch = total_epochs;  // worst case: only at the end
    for (const auto& cp : sym.log.checkpoints)
      if (cp.step > 0 && cp.loss <= iid.final_loss) {
        reach_epoch = static_cast<double>(cp.step) / spe;
        break;
      }
    const double speedup = (total_epochs - reach_epoch) / total_epochs;
    if (speedup > 0.0) ++speedup_positive;
    detail8 += "seed " + std::to_string(seeds[i]) + ": speed-up " + fmt(100.0 * speedup) +
               "%; ";
  }
  report(8, "symmetric init: s=1 at step 0 and positive convergence speed-up",
         sym_init_all_one && speedup_positive >= 2,
         detail8 + "s(0)=1 in all layers: " + (sym_init_all_one ? "yes" : "no"));
}

// ---- 9: inspector fixtures -------------------------------------------------

void criterion_9() {
  bool ok = true;
  std::string detail;

  Rng rng(1010);
  WeightContainer c;
  for (int l = 0; l < 2; ++l) {
    const Matrix wq = rng.gaussian_matrix(6, 6);
    const std::string prefix = "layers." + std::to_string(l) + ".";
    c.tensors[prefix + "q"] = TensorEntry::from_matrix(wq, Dtype::F32);
    c.tensors[prefix + "k"] = TensorEntry::from_matrix(wq, Dtype::F32);
  }
  const std::string p1 = "/tmp/attngeom_acc_1.safetensors";
  const std::string p2 = "/tmp/attngeom_acc_2.safetensors";
  save_container(c, p1);
  save_container(load_container(p1), p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  if (b1 != b2 || b1.empty()) {
    ok = false;
    detail += "round-trip not byte-identical; ";
  }

  LayerPattern pat;
  pat.query_pattern = "layers.{}.q";
  pat.key_pattern = "layers.{}.k";
  pat.transpose_key = false;
  const InspectResult res = inspect_report(load_container(p1), pat, 2.0);
  for (const auto& ls : res.report.per_layer)
    if (std::abs(ls.s - 1.0) > 1e-9) {
      ok = false;
      detail += "symmetric fixture s != 1; ";
    }

  const std::string bad = "/tmp/attngeom_acc_bad.safetensors";
  {
    std::ofstream out(bad, std::ios::binary | std::ios::trunc);
    const std::uint64_t huge = 1 << 30;
    for (std::size_t i = 0; i < 8; ++i)
      out.put(static_cast<char>((huge >> (8 * i)) & 0xff));
    out << "{}";
  }
  try {
    load_container(bad);
    ok = false;
    detail += "malformed header accepted; ";
  } catch (const ParseError& e) {
    if (std::string(e.what()).find("byte") == std::string::npos) {
      ok = false;
      detail += "parse error lacks byte position; ";
    }
  }
  std::remove(p1.c_str());
  std::remove(p2.c_str());
  std::remove(bad.c_str());

  report(9, "inspector fixtures: byte-identical round-trip, s=1 audit, positioned errors",
         ok, detail.empty() ? "real-checkpoint audits skipped (network-dependent)" : detail);
}

// ---- 10: tail lemma ---------------------------------------------------------

void criterion_10() {
  const Sampler wide = [](Rng& r) { return 2.0 * r.gaussian(); };
  const Sampler narrow = [](Rng& r) { return r.gaussian(); };
  bool ok = true;
  std::string detail;
  for (double z : {1.5, 2.0, 3.0}) {
    const auto res = tail_prob_check(wide, narrow, 0.0, 2.0, 1.0, z, 100000, 1011);
    if (!(res.p_a >= res.p_b)) ok = false;
    detail += "z=" + fmt(z) + ": " + fmt(res.p_a) + " vs " + fmt(res.p_b) + "; ";
  }
  report(10, "tail lemma: wider gaussian dominates above the bound", ok, detail);
}

}  // namespace

int main() {
  std::cout << "attention-geometry acceptance suite" << std::endl;
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criteria_7_and_8();
  criterion_9();
  criterion_10();
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
