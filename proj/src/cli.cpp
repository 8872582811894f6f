#include "icll/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "icll/boundary.hpp"
#include "icll/checkpoint.hpp"
#include "icll/error.hpp"
#include "icll/evaluation.hpp"
#include "icll/format.hpp"
#include "icll/predictors.hpp"
#include "icll/training.hpp"
#include "json.hpp"

#ifndef ICLL_VERSION
#define ICLL_VERSION "unknown"
#endif

namespace icll {

namespace fs = std::filesystem;

std::vector<std::string> config_to_args(const std::string& text) {
  std::vector<std::string> args;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw SpecError("config line " + std::to_string(lineno) + ": expected key = value, got '" +
                      line + "'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') &&
        value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw SpecError("config line " + std::to_string(lineno) + ": empty key");
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

// Comma list ("1,2,5") or inclusive range ("1:10", "0.5:2:0.5").
std::vector<double> parse_grid(const std::string& text, const std::string& what) {
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() < 2 || parts.size() > 3) throw SpecError(what + ": bad range '" + text + "'");
    const double lo = parse_number(parts[0], what);
    const double hi = parse_number(parts[1], what);
    const double step = parts.size() == 3 ? parse_number(parts[2], what) : 1.0;
    if (!(step > 0) || !(lo <= hi)) throw SpecError(what + ": bad range '" + text + "'");
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  } else {
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ',');) out.push_back(parse_number(p, what));
  }
  if (out.empty()) throw SpecError(what + ": empty grid");
  for (double v : out)
    if (!(v > 0)) throw SpecError(what + ": sigma values must be positive, got " + format_number(v));
  return out;
}

struct OutputArgs {
  std::string out;
  std::string name;
  bool force = false;
  std::size_t workers = 1;
};

struct ProtocolArgs {
  std::string df = "normal:0:1";
  std::string di = "normal:0:1";
  std::string df_sigmas;
  std::size_t functions = 100;
  std::size_t batches = 64;
  std::size_t points = 41;
  std::size_t skip = 2;
  std::uint64_t function_seed = 1234;
  std::uint64_t point_seed = 5678;
  bool sorted = false;
  double noise = 0.0;

  EvalProtocol protocol() const {
    EvalProtocol p;
    p.spec_f = DistributionSpec::parse(df);
    p.spec_i = DistributionSpec::parse(di);
    p.n_functions = functions;
    p.n_batches = batches;
    p.n_points = points;
    p.skip = skip;
    p.function_seed = function_seed;
    p.point_seed = point_seed;
    p.sorted = sorted;
    p.noise_std = noise;
    p.validate();
    return p;
  }

  // One protocol per --df-sigmas entry (D_F = N(0, sigma)), else just --df.
  std::vector<EvalProtocol> protocols() const {
    const EvalProtocol base = protocol();
    if (df_sigmas.empty()) return {base};
    std::vector<EvalProtocol> out;
    for (double s : parse_grid(df_sigmas, "--df-sigmas")) {
      EvalProtocol p = base;
      p.spec_f = DistributionSpec::normal(0, s);
      out.push_back(p);
    }
    return out;
  }
};

struct PredictorArgs {
  std::string checkpoint;
  std::string kind;
  std::string label;
  double lambda = 1e-3;
  std::size_t k = 3;
  double clamp = 30.0;
  std::string bank = "normal:0:1";
  std::size_t bank_size = 1000;
  std::uint64_t bank_seed = 99;

  std::unique_ptr<Predictor> make() const {
    if (!checkpoint.empty() && !kind.empty()) {
      throw SpecError("give either --checkpoint or --kind, not both");
    }
    if (!checkpoint.empty()) {
      auto model = load_checkpoint(checkpoint);
      const std::string name = label.empty() ? fs::path(checkpoint).stem().string() : label;
      return std::make_unique<ModelPredictor>(std::move(model), name);
    }
    if (kind.empty()) throw SpecError("a predictor is required: --checkpoint FILE or --kind KIND");
    if (kind == "ls") return std::make_unique<LeastSquaresPredictor>();
    if (kind == "ridge") return std::make_unique<RidgePredictor>(lambda);
    if (kind == "zero") return std::make_unique<ZeroPredictor>();
    if (kind == "3nn") return std::make_unique<KnnPredictor>(3);
    if (kind == "knn") return std::make_unique<KnnPredictor>(k);
    if (kind == "nearest") {
      return std::make_unique<NearestSequencePredictor>(k, DistributionSpec::parse(bank), bank_size,
                                                        bank_seed);
    }
    if (kind == "clamp") return std::make_unique<ClampOracle>(clamp);
    throw SpecError("unknown predictor kind '" + kind +
                    "' (expected ls, ridge, zero, 3nn, knn, nearest or clamp)");
  }
};

void add_output_options(CLI::App* cmd, OutputArgs& o) {
  cmd->add_option("--out", o.out, "Output directory (default: $ICLL_OUT_ROOT/<name>)");
  cmd->add_option("--name", o.name, "Run name under $ICLL_OUT_ROOT (default: the command name)");
  cmd->add_flag("--force", o.force, "Write into an existing non-empty output directory");
  cmd->add_option("--workers", o.workers, "Evaluation worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);
}

void add_protocol_options(CLI::App* cmd, ProtocolArgs& p) {
  cmd->add_option("--df", p.df, "Test coefficient distribution");
  cmd->add_option("--di", p.di, "Test input distribution");
  cmd->add_option("--df-sigmas", p.df_sigmas,
                  "Evaluate once per sigma with D_F = normal:0:sigma (list or lo:hi[:step])");
  cmd->add_option("--functions", p.functions, "Number of test functions");
  cmd->add_option("--batches", p.batches, "Prompts per function");
  cmd->add_option("--points", p.points, "Points per prompt");
  cmd->add_option("--skip", p.skip, "Leading predictions excluded from the error");
  cmd->add_option("--function-seed", p.function_seed);
  cmd->add_option("--point-seed", p.point_seed);
  cmd->add_flag("--sorted", p.sorted, "Sort prompt inputs ascending");
  cmd->add_option("--noise", p.noise, "Std of Gaussian noise added to y tokens");
}

void add_predictor_options(CLI::App* cmd, PredictorArgs& p, bool with_checkpoint) {
  if (with_checkpoint) {
    cmd->add_option("--checkpoint", p.checkpoint, "Model checkpoint (.icll)");
    cmd->add_option("--label", p.label, "Predictor name in CSV output");
  }
  cmd->add_option("--kind", p.kind, "Baseline: ls, ridge, zero, 3nn, knn, nearest, clamp");
  cmd->add_option("--lambda", p.lambda, "Ridge penalty");
  cmd->add_option("--k", p.k, "Neighbours for knn / candidates for nearest");
  cmd->add_option("--clamp", p.clamp, "Level of the clamp oracle");
  cmd->add_option("--bank", p.bank, "Function law of the nearest-sequence bank");
  cmd->add_option("--bank-size", p.bank_size);
  cmd->add_option("--bank-seed", p.bank_seed);
}

// Output directory plus its append-only manifest.
class RunOutput {
 public:
  RunOutput(const OutputArgs& o, const std::string& command) {
    if (!o.out.empty()) {
      dir_ = o.out;
    } else {
      const char* root = std::getenv("ICLL_OUT_ROOT");
      dir_ = fs::path(root != nullptr && *root != '\0' ? root : "run") /
             (o.name.empty() ? command : o.name);
    }
    std::error_code ec;
    if (fs::exists(dir_, ec) && !fs::is_empty(dir_, ec) && !o.force) {
      throw IoError("output directory " + dir_.string() +
                    " is not empty; pass --force to write into it");
    }
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create " + dir_.string() + ": " + ec.message());
    started_ = utc_now();
  }

  const fs::path& dir() const { return dir_; }

  fs::path write(const std::string& file, const std::string& text) {
    const auto path = dir_ / file;
    write_text(path, text);
    outputs_.push_back(file);
    return path;
  }
  // Records every regular file currently in the directory except the manifest.
  void note_directory() {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir_))
      if (e.is_regular_file() && e.path().filename() != "manifest.jsonl")
        files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    outputs_ = files;
  }

  void finish(const std::vector<std::string>& args, const std::string& command,
              const std::string& resolved, const nlohmann::json& seeds) {
    nlohmann::json m;
    m["command"] = command;
    std::string line = "icll";
    for (const auto& a : args) line += " " + a;
    m["command_line"] = line;
    m["resolved_config"] = resolved;
    m["seeds"] = seeds;
    m["version"] = ICLL_VERSION;
    m["started_at"] = started_;
    m["finished_at"] = utc_now();
    m["outputs"] = outputs_;
    std::ofstream out(dir_ / "manifest.jsonl", std::ios::app);
    if (!out) throw IoError("cannot append to " + (dir_ / "manifest.jsonl").string());
    out << m.dump() << '\n';
  }

 private:
  fs::path dir_;
  std::string started_;
  std::vector<std::string> outputs_;
};

nlohmann::json protocol_seeds(const ProtocolArgs& p) {
  return {{"function_seed", p.function_seed}, {"point_seed", p.point_seed}};
}

std::string eval_rows(const Predictor& predictor, const std::vector<EvalProtocol>& protocols,
                      std::size_t workers, std::string* positions) {
  std::vector<EvalReport> reports;
  std::ostringstream pos;
  pos << "predictor,sigma2,position,mse\n";
  for (const auto& p : protocols) {
    reports.push_back(evaluate(predictor, p, workers));
    const auto& r = reports.back();
    const double s = p.spec_f.normal_sigma();
    const std::string sigma = std::isnan(s) ? p.spec_f.to_string() : format_number(s);
    for (std::size_t k = 0; k < r.per_position.size(); ++k) {
      pos << r.predictor << ',' << sigma << ',' << k + 1 << ',' << format_number(r.per_position[k])
          << '\n';
    }
  }
  if (positions != nullptr) *positions = pos.str();
  std::ostringstream csv;
  write_eval_csv(csv, reports);
  return csv.str();
}

// Prompt files hold one prompt per line: x1, y1, ..., xk, yk, x_query
// (commas and/or whitespace). '#' starts a comment line.
std::vector<std::vector<double>> read_prompt_file(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<double>> prompts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<double> values;
    for (std::string tok; ls >> tok;) {
      if (tok[0] == '#') break;
      values.push_back(parse_number(tok, path.string() + " line " + std::to_string(lineno)));
    }
    if (values.empty()) continue;
    if (values.size() % 2 == 0) {
      throw SpecError(path.string() + " line " + std::to_string(lineno) +
                      ": a prompt needs pairs followed by one query x (odd token count)");
    }
    prompts.push_back(std::move(values));
  }
  if (prompts.empty()) throw SpecError(path.string() + ": no prompts");
  return prompts;
}

std::string predict_prompt_file(const Predictor& predictor, const fs::path& path) {
  const auto prompts = read_prompt_file(path);
  std::ostringstream csv;
  csv << "prompt,query,prediction\n";
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& v = prompts[i];
    const std::size_t pairs = v.size() / 2;
    PromptBatch batch;
    batch.rows = 1;
    batch.n_points = pairs + 1;
    for (std::size_t k = 0; k < pairs; ++k) {
      batch.xs.push_back(v[2 * k]);
      batch.ys.push_back(v[2 * k + 1]);
    }
    batch.xs.push_back(v.back());
    batch.ys.push_back(0.0);  // never read: predictions are causal
    batch.targets = batch.ys;
    batch.functions = {LinearFunction{}};
    const auto pred = predictor.predict(batch);
    csv << i << ',' << format_number(v.back()) << ',' << format_number(pred.back()) << '\n';
  }
  return csv.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Laboratory for in-context learning of linear functions", "icll"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ICLL_VERSION));
  std::string config_file;
  auto* config_opt = app.add_option("--config", config_file,
                                    "Flat key = value file; keys are long flag names, flags override it");
  (void)config_opt;

  OutputArgs output;
  ProtocolArgs protocol;
  PredictorArgs predictor_args;

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints");
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  std::string t_df = "normal:0:1", t_di = "normal:0:1", t_variant = "full", t_activation = "gelu";
  std::size_t t_prompt_len = 0;
  train_cmd->add_option("--layers", model_cfg.n_layers);
  train_cmd->add_option("--heads", model_cfg.n_heads);
  train_cmd->add_option("--emb", model_cfg.d_emb);
  train_cmd->add_option("--max-positions", model_cfg.max_positions);
  train_cmd->add_option("--variant", t_variant, "full, attention_only (attn_only) or mlp_only");
  train_cmd->add_option("--activation", t_activation, "gelu or relu");
  train_cmd->add_option("--df", t_df, "Coefficient distribution");
  train_cmd->add_option("--di", t_di, "Input distribution (must equal --df)");
  train_cmd->add_option("--steps", train_cfg.steps);
  train_cmd->add_option("--batch", train_cfg.batch_size);
  train_cmd->add_option("--lr", train_cfg.lr);
  train_cmd->add_option("--n-points", train_cfg.n_points);
  train_cmd->add_option("--train-prompt-len", t_prompt_len, "Points per training prompt (default: --n-points)");
  train_cmd->add_option("--seed", train_cfg.seed);
  train_cmd->add_option("--checkpoint-every", train_cfg.checkpoint_every);
  train_cmd->add_option("--log-every", train_cfg.log_every);
  train_cmd->add_flag("--sorted", train_cfg.sorted_prompts);
  train_cmd->add_option("--noise", train_cfg.noise_std);
  add_output_options(train_cmd, output);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Epsilon, references and error rate on a protocol");
  add_predictor_options(eval_cmd, predictor_args, true);
  add_protocol_options(eval_cmd, protocol);
  add_output_options(eval_cmd, output);

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Log error over a (sigma1, sigma2) grid");
  std::string sigma1 = "1:10", sigma2 = "1:10";
  add_predictor_options(sweep_cmd, predictor_args, true);
  add_protocol_options(sweep_cmd, protocol);
  sweep_cmd->add_option("--sigma1", sigma1, "Input sigmas (list or lo:hi[:step])");
  sweep_cmd->add_option("--sigma2", sigma2, "Coefficient sigmas (list or lo:hi[:step])");
  add_output_options(sweep_cmd, output);

  // boundary
  auto* boundary_cmd = app.add_subcommand("boundary", "Adversarial sweep and plateau detection");
  BoundarySweep sweep;
  std::string context = sweep.context.to_string();
  add_predictor_options(boundary_cmd, predictor_args, true);
  boundary_cmd->add_option("--slope", sweep.f.a);
  boundary_cmd->add_option("--intercept", sweep.f.b);
  boundary_cmd->add_option("--x-lo", sweep.x_lo);
  boundary_cmd->add_option("--x-hi", sweep.x_hi);
  boundary_cmd->add_option("--step", sweep.step);
  boundary_cmd->add_option("--context", context, "Law of the fixed context inputs");
  boundary_cmd->add_option("--context-points", sweep.context_points);
  boundary_cmd->add_option("--sweep-seed", sweep.seed);
  boundary_cmd->add_option("--window", sweep.window, "Plateau window length");
  boundary_cmd->add_option("--tol", sweep.rel_tol, "Plateau relative std tolerance");
  add_output_options(boundary_cmd, output);

  // attn
  auto* attn_cmd = app.add_subcommand("attn", "Mean attention maps over sampled prompts");
  std::string a_df = "normal:0:1", a_di = "normal:0:1";
  std::size_t a_prompts = 64, a_points = 41;
  std::uint64_t a_seed = 5;
  bool a_sorted = false;
  std::optional<std::size_t> a_layer;
  attn_cmd->add_option("--checkpoint", predictor_args.checkpoint)->required();
  attn_cmd->add_option("--df", a_df);
  attn_cmd->add_option("--di", a_di);
  attn_cmd->add_option("--prompts", a_prompts);
  attn_cmd->add_option("--points", a_points);
  attn_cmd->add_option("--seed", a_seed);
  attn_cmd->add_flag("--sorted", a_sorted);
  attn_cmd->add_option("--layer", a_layer, "Only this layer");
  add_output_options(attn_cmd, output);

  // baseline
  auto* baseline_cmd = app.add_subcommand("baseline", "Evaluate an analytic baseline");
  std::string prompt_file;
  add_predictor_options(baseline_cmd, predictor_args, false);
  baseline_cmd->get_option("--kind")->required();
  add_protocol_options(baseline_cmd, protocol);
  baseline_cmd->add_option("--prompt-file", prompt_file,
                           "Predict the final query of each prompt in this file instead");
  add_output_options(baseline_cmd, output);

  try {
    // Splice a --config file in right after the subcommand so later flags win.
    std::vector<std::string> args;
    std::optional<std::string> cfg_path;
    for (std::size_t i = 0; i < raw_args.size(); ++i) {
      const auto& a = raw_args[i];
      if (a == "--config") {
        if (i + 1 >= raw_args.size()) throw CLI::ArgumentMismatch("--config needs a file");
        cfg_path = raw_args[++i];
      } else if (a.rfind("--config=", 0) == 0) {
        cfg_path = a.substr(9);
      } else {
        args.push_back(a);
      }
    }
    if (cfg_path) {
      const auto extra = config_to_args(read_text(*cfg_path));
      auto sub = std::find_if(args.begin(), args.end(),
                              [](const std::string& a) { return !a.empty() && a[0] != '-'; });
      if (sub == args.end()) throw CLI::CallForHelp();
      args.insert(sub + 1, extra.begin(), extra.end());
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);

    nlohmann::json seeds;
    std::string command;
    std::unique_ptr<RunOutput> run;

    if (*train_cmd) {
      command = "train";
      model_cfg.variant = parse_variant(t_variant);
      model_cfg.activation = parse_activation(t_activation);
      model_cfg.validate();
      train_cfg.spec_f = DistributionSpec::parse(t_df);
      train_cfg.spec_i = DistributionSpec::parse(t_di);
      train_cfg.train_prompt_len = t_prompt_len == 0 ? train_cfg.n_points : t_prompt_len;
      train_cfg.validate();
      run = std::make_unique<RunOutput>(output, command);
      seeds = {{"seed", train_cfg.seed},
               {"init_seed", init_seed(train_cfg.seed)},
               {"data_seed", SeededRng::derive(train_cfg.seed, 1)}};
      SeededRng init(init_seed(train_cfg.seed));
      TransformerModel<float> model(model_cfg, init);
      out << "training " << model.parameter_count() << " parameters for " << train_cfg.steps
          << " steps into " << run->dir().string() << '\n';
      std::optional<TrainedRun> trained;
      try {
        trained = train(std::move(model), train_cfg, run->dir());
      } catch (const NumericError&) {
        run->note_directory();
        run->finish(raw_args, command, app.config_to_str(true, false), seeds);
        throw;
      }
      run->note_directory();
      if (!trained->loss_log.empty()) {
        out << "final logged loss " << format_number(trained->loss_log.back().second) << '\n';
      }
    } else if (*eval_cmd) {
      command = "eval";
      const auto protocols = protocol.protocols();
      const auto predictor = predictor_args.make();
      run = std::make_unique<RunOutput>(output, command);
      seeds = protocol_seeds(protocol);
      std::string positions;
      const std::string csv = eval_rows(*predictor, protocols, output.workers, &positions);
      run->write("eval.csv", csv);
      run->write("positions.csv", positions);
      out << csv;
    } else if (*sweep_cmd) {
      command = "sweep";
      const auto base = protocol.protocol();
      const auto s1 = parse_grid(sigma1, "--sigma1");
      const auto s2 = parse_grid(sigma2, "--sigma2");
      const auto predictor = predictor_args.make();
      run = std::make_unique<RunOutput>(output, command);
      seeds = protocol_seeds(protocol);
      const auto cells = shift_sweep(*predictor, base, s1, s2, output.workers);
      std::ostringstream csv;
      write_sweep_csv(csv, cells);
      run->write("sweep.csv", csv.str());
      out << "wrote " << cells.size() << " cells to " << (run->dir() / "sweep.csv").string() << '\n';
    } else if (*boundary_cmd) {
      command = "boundary";
      sweep.context = DistributionSpec::parse(context);
      sweep.validate();
      const auto predictor = predictor_args.make();
      run = std::make_unique<RunOutput>(output, command);
      seeds = {{"sweep_seed", sweep.seed}};
      const auto profile = detect_boundaries(*predictor, sweep);
      std::ostringstream csv;
      write_boundary_csv(csv, profile);
      run->write("boundary.csv", csv.str());
      const std::string json = boundary_profile_json(profile);
      run->write("boundary.json", json + "\n");
      out << json << '\n';
    } else if (*attn_cmd) {
      command = "attn";
      const auto df = DistributionSpec::parse(a_df);
      const auto di = DistributionSpec::parse(a_di);
      if (a_points < 2) throw SpecError("--points must be at least 2");
      const auto model = load_checkpoint(predictor_args.checkpoint);
      if (a_layer && *a_layer >= model.config().n_layers) {
        throw SpecError("--layer " + std::to_string(*a_layer) + " out of range");
      }
      run = std::make_unique<RunOutput>(output, command);
      seeds = {{"seed", a_seed}};
      SeededRng rng(a_seed);
      const auto prompts = sample_batch(df, di, a_prompts, a_points, rng, {a_sorted, 0.0});
      const auto maps = attention_summary(model, prompts);
      std::ostringstream csv;
      write_attention_csv(csv, maps, a_layer);
      run->write("attn.csv", csv.str());
      out << "wrote " << (run->dir() / "attn.csv").string() << '\n';
    } else if (*baseline_cmd) {
      command = "baseline";
      const auto predictor = predictor_args.make();
      if (!prompt_file.empty()) {
        const std::string csv = predict_prompt_file(*predictor, prompt_file);
        run = std::make_unique<RunOutput>(output, command);
        run->write("predictions.csv", csv);
        out << csv;
      } else {
        const auto protocols = protocol.protocols();
        run = std::make_unique<RunOutput>(output, command);
        seeds = protocol_seeds(protocol);
        std::string positions;
        const std::string csv = eval_rows(*predictor, protocols, output.workers, &positions);
        run->write("eval.csv", csv);
        run->write("positions.csv", positions);
        out << csv;
      }
    }
    run->finish(raw_args, command, app.config_to_str(true, false), seeds);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const SpecError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CapacityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace icll
