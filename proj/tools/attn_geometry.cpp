// attn-geometry: score / train / verify / count / inspect front-end.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attngeom/gradient_lab.hpp"
#include "attngeom/inspector.hpp"
#include "attngeom/scores.hpp"
#include "attngeom/training.hpp"
#include "attngeom/transformer.hpp"
#include "attngeom/verify.hpp"

namespace {

using attngeom::Matrix;
using json = nlohmann::json;

constexpr const char* kCsvHeader = "# attention-geometry v1\n";
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

Matrix load_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open \"" + path + "\"");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows[0].size())
      throw std::runtime_error("ragged CSV matrix in \"" + path + "\"");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty matrix file \"" + path + "\"");
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

bool looks_like_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char prefix[9] = {};
  in.read(prefix, 8);
  if (in.gcount() < 8) return false;
  // heuristic: the ninth byte of a container is the '{' opening the header
  char brace = 0;
  in.read(&brace, 1);
  return brace == '{';
}

json report_to_json(const attngeom::ScoreReport& report) {
  json layers = json::array();
  for (const auto& ls : report.per_layer)
    layers.push_back({{"layer", ls.layer}, {"s", ls.s}, {"d", ls.d}});
  return {{"per_layer", layers},
          {"median_s", report.median_s},
          {"iqr_s", {report.iqr_s_low, report.iqr_s_high}},
          {"median_d", report.median_d},
          {"iqr_d", {report.iqr_d_low, report.iqr_d_high}},
          {"gamma", report.gamma}};
}

int cmd_score(const std::string& file, double gamma, const std::string& format) {
  std::vector<std::pair<std::string, Matrix>> matrices;
  if (looks_like_container(file)) {
    const attngeom::WeightContainer c = attngeom::load_container(file);
    for (const auto& [name, entry] : c.tensors)
      if (entry.shape.size() == 2 && entry.shape[0] == entry.shape[1])
        matrices.emplace_back(name, entry.to_matrix());
    if (matrices.empty())
      throw std::runtime_error("no square 2-D tensors in \"" + file + "\"");
  } else {
    matrices.emplace_back("matrix", load_csv_matrix(file));
  }

  if (format == "json") {
    json out = json::array();
    for (const auto& [name, m] : matrices)
      out.push_back({{"name", name},
                     {"s", attngeom::symmetry_score(m)},
                     {"d", attngeom::directionality_score(m, gamma)}});
    std::cout << out.dump(2) << '\n';
  } else {
    std::cout << kCsvHeader << "name,s,d\n";
    std::cout.precision(17);
    for (const auto& [name, m] : matrices)
      std::cout << name << ',' << attngeom::symmetry_score(m) << ','
                << attngeom::directionality_score(m, gamma) << '\n';
  }
  return kExitOk;
}

struct TrainOptions {
  attngeom::ModelConfig model;
  attngeom::TrainingConfig training;
  attngeom::InitScheme init = attngeom::InitScheme::IidGaussian;
  std::string corpus_path;           // empty -> synthetic
  std::size_t corpus_bytes = 102400; // for the synthetic source
  double ff_mult = 2.0;
  double sigma = 0.1;
};

void apply_config_file(TrainOptions& opt, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config \"" + path + "\"");
  json j = json::parse(in);
  if (!j.is_object()) throw std::runtime_error("config: top level must be a JSON object");
  static const std::set<std::string> known{
      "layers", "heads",  "dim",       "ff_dim",    "seq_len", "steps",
      "batch_size", "seed", "score_every", "gamma",  "lr",      "mask_prob",
      "sigma",  "corpus", "corpus_bytes", "objective", "init"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key))
      throw std::runtime_error("config: unknown key \"" + key + "\"");
  if (j.contains("layers")) opt.model.num_layers = j["layers"].get<std::size_t>();
  if (j.contains("heads")) opt.model.num_heads = j["heads"].get<std::size_t>();
  if (j.contains("dim")) opt.model.model_dim = j["dim"].get<std::size_t>();
  if (j.contains("ff_dim")) opt.model.ff_dim = j["ff_dim"].get<std::size_t>();
  if (j.contains("seq_len")) opt.training.seq_len = j["seq_len"].get<std::size_t>();
  if (j.contains("steps")) opt.training.steps = j["steps"].get<std::size_t>();
  if (j.contains("batch_size")) opt.training.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("seed")) opt.training.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("score_every")) opt.training.score_every = j["score_every"].get<std::size_t>();
  if (j.contains("gamma")) opt.training.gamma = j["gamma"].get<double>();
  if (j.contains("lr")) opt.training.optimizer.lr = j["lr"].get<double>();
  if (j.contains("mask_prob")) opt.training.mask_prob = j["mask_prob"].get<double>();
  if (j.contains("sigma")) opt.sigma = j["sigma"].get<double>();
  if (j.contains("corpus")) opt.corpus_path = j["corpus"].get<std::string>();
  if (j.contains("corpus_bytes")) opt.corpus_bytes = j["corpus_bytes"].get<std::size_t>();
  if (j.contains("objective")) {
    const std::string o = j["objective"].get<std::string>();
    if (o == "ar") opt.training.objective = attngeom::Objective::Autoregressive;
    else if (o == "mlm") opt.training.objective = attngeom::Objective::Bidirectional;
    else throw std::runtime_error("config: objective must be \"ar\" or \"mlm\"");
  }
  if (j.contains("init")) {
    const std::string i = j["init"].get<std::string>();
    if (i == "iid") opt.init = attngeom::InitScheme::IidGaussian;
    else if (i == "symmetric") opt.init = attngeom::InitScheme::SymmetricQk;
    else throw std::runtime_error("config: init must be \"iid\" or \"symmetric\"");
  }
}

int cmd_train(const TrainOptions& opt_in, const std::string& out_dir,
              const std::string& format) {
  TrainOptions opt = opt_in;
  std::string text;
  if (!opt.corpus_path.empty()) {
    std::ifstream in(opt.corpus_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus \"" + opt.corpus_path + "\"");
    text.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  } else {
    text = attngeom::synthetic_corpus(opt.corpus_bytes, opt.training.seed);
  }
  const attngeom::CharTokenizer tok = attngeom::char_tokenizer(text);

  opt.model.vocab_size = static_cast<std::size_t>(tok.vocab_size);
  opt.model.max_seq = opt.training.seq_len;
  opt.model.causal = opt.training.objective == attngeom::Objective::Autoregressive;
  opt.model.validate();
  opt.training.validate();

  attngeom::ModelParams params =
      attngeom::init_params(opt.model, opt.init, opt.sigma, opt.training.seed);
  const attngeom::TrainingLog log =
      attngeom::train(params, opt.model, tok.ids, tok.mask_id, opt.training);

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);

  {
    std::ofstream csv(dir / "train_log.csv");
    csv << kCsvHeader << "step,loss,layer,s,d\n";
    csv.precision(17);
    for (const auto& cp : log.checkpoints)
      for (const auto& ls : cp.scores.per_layer)
        csv << cp.step << ',' << cp.loss << ',' << ls.layer << ',' << ls.s << ','
            << ls.d << '\n';
  }
  {
    json jlog = {{"steps_per_epoch", log.steps_per_epoch}, {"checkpoints", json::array()}};
    for (const auto& cp : log.checkpoints)
      jlog["checkpoints"].push_back(
          {{"step", cp.step}, {"loss", cp.loss}, {"scores", report_to_json(cp.scores)}});
    std::ofstream js(dir / "train_log.json");
    js << jlog.dump(2) << '\n';
  }
  attngeom::save_container(attngeom::container_from_params(params),
                           (dir / "checkpoint.safetensors").string());

  const auto& last = log.checkpoints.back();
  if (format == "json") {
    std::cout << json({{"final_step", last.step},
                       {"final_loss", last.loss},
                       {"final_scores", report_to_json(last.scores)}})
                     .dump(2)
              << '\n';
  } else {
    std::cout << "final step " << last.step << ", loss " << last.loss << ", median s "
              << last.scores.median_s << ", median d " << last.scores.median_d << '\n';
  }
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
  const auto results = attngeom::run_verification(suite, seed);
  bool all_passed = true;
  json out = json::array();
  for (const auto& sr : results) {
    json props = json::array();
    for (const auto& p : sr.properties) {
      props.push_back({{"name", p.name},
                       {"passed", p.passed},
                       {"margin", p.margin},
                       {"detail", p.detail}});
      if (!p.passed) all_passed = false;
    }
    out.push_back({{"suite", sr.suite}, {"passed", sr.passed()}, {"properties", props}});
  }
  std::cout << out.dump(2) << '\n';
  return all_passed ? kExitOk : kExitFailure;
}

int cmd_count(std::size_t n, const std::string& probs_csv, const std::string& mode,
              const std::string& format) {
  std::vector<double> probs;
  if (probs_csv.empty()) {
    if (n == 0) throw std::runtime_error("count: provide --n or --probs");
    probs.assign(n, 1.0 / static_cast<double>(n));
  } else {
    std::stringstream ss(probs_csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) probs.push_back(std::stod(cell));
    if (n != 0 && n != probs.size())
      throw std::runtime_error("count: --n disagrees with --probs length");
  }
  const attngeom::CountingMode cm = mode == "ar"
                                        ? attngeom::CountingMode::Autoregressive
                                        : attngeom::CountingMode::Bidirectional;
  const auto res = attngeom::counting_ratio(probs, cm);
  if (format == "json") {
    std::cout << json({{"ratio", res.infinite ? json("inf") : json(res.ratio)},
                       {"infinite", res.infinite},
                       {"mu", res.mu},
                       {"remark_form",
                        std::isinf(res.remark_form) ? json("inf") : json(res.remark_form)}})
                     .dump(2)
              << '\n';
  } else if (res.infinite) {
    std::cout << "ratio inf (degenerate: token never appears past position 1)\n";
  } else {
    std::cout << "ratio " << res.ratio << '\n';
  }
  return kExitOk;
}

int cmd_inspect(const std::string& container_path, const std::string& pattern_path,
                double gamma, const std::string& out_dir, const std::string& format) {
  std::ifstream pin(pattern_path);
  if (!pin) throw std::runtime_error("cannot open pattern config \"" + pattern_path + "\"");
  std::stringstream buf;
  buf << pin.rdbuf();
  const attngeom::LayerPattern pattern = attngeom::parse_pattern(buf.str());
  const attngeom::WeightContainer container = attngeom::load_container(container_path);
  const attngeom::InspectResult result = attngeom::inspect_report(container, pattern, gamma);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    std::ofstream csv(dir / "report.csv");
    csv << result.csv;
    std::ofstream js(dir / "report.json");
    js << report_to_json(result.report).dump(2) << '\n';
  }
  if (format == "json")
    std::cout << report_to_json(result.report).dump(2) << '\n';
  else
    std::cout << result.csv;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-geometry: train, score and audit W_qk bilinear forms"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::uint64_t seed = 0;
  double gamma = 2.0;
  std::string out_dir;
  std::string format = "csv";
  app.add_option("--seed", seed, "RNG seed (every subcommand is deterministic per seed)");
  app.add_option("--gamma", gamma, "outlier threshold factor for the directionality score");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--format", format, "output format")
      ->check(CLI::IsMember({"csv", "json"}));

  auto* score = app.add_subcommand("score", "score a matrix file (container or CSV)");
  std::string score_file;
  score->add_option("file", score_file, "matrix file")->required();

  auto* train = app.add_subcommand("train", "train a toy model and log W_qk scores");
  TrainOptions topt;
  topt.model.num_layers = 2;
  topt.model.num_heads = 2;
  topt.model.model_dim = 32;
  topt.model.ff_dim = 64;
  std::string config_path, init_name, objective_name;
  train->add_option("--config", config_path, "JSON config; flags override its values");
  train->add_option("--init", init_name, "initialization scheme")
      ->check(CLI::IsMember({"iid", "symmetric"}));
  train->add_option("--objective", objective_name, "training objective")
      ->check(CLI::IsMember({"ar", "mlm"}));
  double mask_prob = -1.0;
  std::size_t steps = 0, layers = 0, heads = 0, dim = 0;
  train->add_option("--mask-prob", mask_prob, "masking probability (mlm)");
  train->add_option("--steps", steps, "optimizer steps");
  train->add_option("--layers", layers, "transformer layers");
  train->add_option("--heads", heads, "attention heads");
  train->add_option("--dim", dim, "model dimension");

  auto* verify = app.add_subcommand("verify", "run property suites");
  std::string suite = "all";
  verify->add_option("suite", suite, "scores|gradients|ratios|counting|tails|all");

  auto* count = app.add_subcommand("count", "context-vs-prediction counting ratio");
  std::size_t count_n = 0;
  std::string probs_csv, mode = "ar";
  count->add_option("--n", count_n, "sequence length (uniform distribution)");
  count->add_option("--probs", probs_csv, "comma-separated position probabilities");
  count->add_option("--mode", mode, "objective")->check(CLI::IsMember({"ar", "mlm"}));

  auto* inspect = app.add_subcommand("inspect", "audit a weight container");
  std::string container_path, pattern_path;
  inspect->add_option("container", container_path, "tensor container file")->required();
  inspect->add_option("--pattern", pattern_path, "JSON pattern config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (score->parsed()) return cmd_score(score_file, gamma, format);
    if (train->parsed()) {
      if (!config_path.empty()) apply_config_file(topt, config_path);
      if (app.count("--seed") > 0 || config_path.empty()) topt.training.seed = seed;
      if (app.count("--gamma") > 0 || config_path.empty()) topt.training.gamma = gamma;
      if (!init_name.empty())
        topt.init = init_name == "symmetric" ? attngeom::InitScheme::SymmetricQk
                                             : attngeom::InitScheme::IidGaussian;
      if (!objective_name.empty())
        topt.training.objective = objective_name == "ar"
                                      ? attngeom::Objective::Autoregressive
                                      : attngeom::Objective::Bidirectional;
      if (mask_prob >= 0.0) topt.training.mask_prob = mask_prob;
      if (steps > 0) topt.training.steps = steps;
      if (layers > 0) topt.model.num_layers = layers;
      if (heads > 0) topt.model.num_heads = heads;
      if (dim > 0) topt.model.model_dim = dim;
      return cmd_train(topt, out_dir.empty() ? "." : out_dir, format);
    }
    if (verify->parsed()) return cmd_verify(suite, seed);
    if (count->parsed()) return cmd_count(count_n, probs_csv, mode, format);
    if (inspect->parsed())
      return cmd_inspect(container_path, pattern_path, gamma, out_dir, format);
  } catch (const attngeom::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const attngeom::UndefinedScoreError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
