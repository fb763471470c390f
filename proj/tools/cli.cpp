// Copyright 2026 The MIRA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.hpp"

#include "mira/mira.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mira::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class UsageError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Argument helpers
// ---------------------------------------------------------------------------

/// Accepts plain decimals and simple fractions such as "2/3".
double parse_number(const std::string& text) {
  const auto slash = text.find('/');
  if (slash == std::string::npos) return io::parse_double(text);
  const double num = io::parse_double(text.substr(0, slash));
  const double den = io::parse_double(text.substr(slash + 1));
  if (den == 0.0) throw io::ParseError("zero denominator in '" + text + "'");
  return num / den;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = text.find(sep, start);
    std::string item = text.substr(start, pos - start);
    if (!item.empty()) parts.push_back(item);
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::pair<Index, Index> parse_size(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos)
    throw io::ParseError("size must look like BxK, got '" + text + "'");
  const double b = io::parse_double(text.substr(0, x));
  const double k = io::parse_double(text.substr(x + 1));
  if (b < 1 || k < 2 || b != std::floor(b) || k != std::floor(k))
    throw io::ParseError("invalid size '" + text + "'");
  return {static_cast<Index>(b), static_cast<Index>(k)};
}

/// Command line with the output directory removed, for manifests.
std::vector<std::string> strip_out(const std::vector<std::string>& args) {
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out" || args[i] == "-o") {
      ++i;
      continue;
    }
    if (args[i].rfind("--out=", 0) == 0) continue;
    kept.push_back(args[i]);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_json(const std::string& path, const json& j) {
  io::write_file(path, j.dump(2) + "\n");
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json inputs = json::object();
  std::uint64_t seed = 0;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void add_input(const std::string& path) { inputs[path] = file_sha256(path); }

  void write(const std::string& dir) const {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    json j = {{"schema_version", io::kSchemaVersion},
              {"tool", "mira"},
              {"version", kVersion},
              {"command", command},
              {"argv", argv},
              {"config", config},
              {"inputs", inputs},
              {"seed", seed},
              {"wall_clock_seconds", seconds}};
    write_json(join_path(dir, "manifest.json"), j);
  }
};

std::string trace_csv(const std::vector<TraceRecord>& trace) {
  std::string s = "iteration,sse_to_reference,step_sse,objective_total\n";
  for (const auto& r : trace) {
    s += std::to_string(r.iteration) + ',' + io::format_double(r.sse_to_reference) +
         ',' + io::format_double(r.step_sse) + ',' +
         io::format_double(r.objective_total) + '\n';
  }
  return s;
}

ProbMatrix read_prob_matrix(const std::string& path) {
  try {
    return ProbMatrix::from(io::read_matrix(path));
  } catch (const ValidationError& e) {
    throw io::ParseError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

struct SolveArgs {
  std::string input;
  std::string beta = "2/3";
  double tau_t = 0.225;
  int iters = 30;
  double tol = 0.0;
  bool logits = false;
  std::uint64_t seed = 0;
  std::string out = "mira-solve";
  bool trace = false;
  int ref_iters = 1000;
};

int cmd_solve(const SolveArgs& a, Manifest& m, std::ostream& out) {
  SolverConfig cfg;
  cfg.beta = parse_number(a.beta);
  cfg.tau_t = a.tau_t;
  cfg.max_iters = a.iters;
  cfg.tol = a.tol;
  cfg.seed = a.seed;
  cfg.validate();
  if (a.trace && a.ref_iters < a.iters)
    throw ParameterError("--ref-iters must be >= --iters");

  const RowMatrix raw = io::read_matrix(a.input);
  m.add_input(a.input);
  m.seed = a.seed;
  m.config = {{"beta", cfg.beta},       {"tau_t", cfg.tau_t},
              {"iters", cfg.max_iters}, {"tol", cfg.tol},
              {"logits", a.logits},     {"trace", a.trace},
              {"ref_iters", a.ref_iters}};

  std::optional<ProbMatrix> p;
  std::optional<LogitMatrix> logits;
  try {
    if (a.logits) {
      logits = LogitMatrix::from(raw);
      p = softmax_with_temperature(*logits, cfg.tau_t);
    } else {
      p = ProbMatrix::from(raw);
    }
  } catch (const ValidationError& e) {
    throw io::ParseError(a.input + ": " + e.what());
  }

  const AssignmentResult r = a.logits ? solve_from_logits(*logits, cfg)
                                      : solve(*p, cfg);
  ensure_dir(a.out);
  io::write_file(join_path(a.out, "assignment.csv"),
                 io::to_csv(r.assignment.values()));
  json result = io::to_json(r);
  result["config"] = m.config;
  write_json(join_path(a.out, "result.json"), result);
  if (a.trace) {
    TraceOptions opt;
    opt.beta = cfg.beta;
    const auto trace =
        convergence_trace(Method::kMira, *p, a.iters, a.ref_iters, opt);
    io::write_file(join_path(a.out, "trace.csv"), trace_csv(trace));
  }
  m.write(a.out);
  out << "solved " << r.assignment.rows() << "x" << r.assignment.cols()
      << " in " << r.iterations_run << " iterations, kkt_residual "
      << io::format_double(r.kkt_residual) << ", objective "
      << io::format_double(r.breakdown.total) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// oracle-check
// ---------------------------------------------------------------------------

struct OracleArgs {
  std::string input;
  std::string beta = "2/3";
  double tol = 1e-5;
  int iters = 200;
  std::string verify_only;
  double grid_resolution = 0.1;
  std::string out = "mira-oracle";
};

double max_abs_diff(const ProbMatrix& a, const ProbMatrix& b) {
  return (a.values() - b.values()).cwiseAbs().maxCoeff();
}

int cmd_oracle_check(const OracleArgs& a, Manifest& m, std::ostream& out,
                     std::ostream& err) {
  const double beta = parse_number(a.beta);
  SolverConfig cfg;
  cfg.beta = beta;
  cfg.max_iters = a.iters;
  cfg.validate();
  if (!(a.tol >= 0.0)) throw ParameterError("--tol must be >= 0");
  oracle::OracleConfig ocfg;
  ocfg.grid_resolution = a.grid_resolution;
  ocfg.validate();

  const ProbMatrix p = read_prob_matrix(a.input);
  m.add_input(a.input);
  m.config = {{"beta", beta},
              {"tol", a.tol},
              {"iters", a.iters},
              {"grid_resolution", a.grid_resolution},
              {"verify_only", a.verify_only}};

  json report = {{"schema_version", io::kSchemaVersion},
                 {"rows", p.rows()},
                 {"cols", p.cols()},
                 {"beta", beta},
                 {"tol", a.tol}};
  bool passed = true;
  ensure_dir(a.out);

  if (!a.verify_only.empty()) {
    const ProbMatrix w = read_prob_matrix(a.verify_only);
    m.add_input(a.verify_only);
    if (w.rows() != p.rows() || w.cols() != p.cols())
      throw io::ParseError("--verify-only matrix shape differs from input");
    const double residual = kkt_residual(w, p, beta);
    const auto reference = solve(p, cfg);
    const double dev = max_abs_diff(w, reference.assignment);
    const double obj = objective(w, p, beta).total;
    passed = residual <= a.tol && dev <= a.tol;
    report["mode"] = "verify";
    report["candidate"] = {{"kkt_residual", residual},
                           {"objective", obj},
                           {"max_deviation_from_solver", dev},
                           {"solver_objective", reference.breakdown.total}};
  } else {
    struct Entry {
      std::string name;
      ProbMatrix w;
      double objective;
    };
    std::vector<Entry> entries;
    json methods = json::object();

    const auto sol = solve(p, cfg);
    entries.push_back({"fixed_point", sol.assignment, sol.breakdown.total});
    methods["fixed_point"] = {{"objective", sol.breakdown.total},
                              {"kkt_residual", sol.kkt_residual},
                              {"iterations", sol.iterations_run}};

    if ((p.values().array() > 0.0).all()) {
      const auto eg = oracle::exp_gradient_solve(p, beta, ocfg);
      entries.push_back({"exp_gradient", eg.assignment, eg.objective});
      methods["exp_gradient"] = {{"objective", eg.objective},
                                 {"steps", eg.steps},
                                 {"converged", eg.converged}};
    } else {
      err << "warning: exp_gradient skipped: input has zero entries\n";
      methods["exp_gradient"] = {{"skipped", "input has zero entries"}};
    }

    if (p.cols() == 2 && p.rows() <= 6) {
      const auto grid = oracle::grid_refine_solve(p, beta, ocfg);
      entries.push_back({"grid", grid.assignment, grid.objective});
      methods["grid"] = {{"objective", grid.objective},
                         {"sweeps", grid.steps},
                         {"converged", grid.converged}};
    } else {
      const std::string why = "grid oracle needs K = 2 and B <= 6, got " +
                              std::to_string(p.rows()) + "x" +
                              std::to_string(p.cols());
      err << "warning: grid skipped: " << why << "\n";
      methods["grid"] = {{"skipped", why}};
    }

    json deviations = json::array();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      for (std::size_t j = i + 1; j < entries.size(); ++j) {
        const double dw = max_abs_diff(entries[i].w, entries[j].w);
        const double df = std::abs(entries[i].objective - entries[j].objective);
        passed = passed && dw <= a.tol && df <= a.tol;
        deviations.push_back({{"a", entries[i].name},
                              {"b", entries[j].name},
                              {"max_assignment_deviation", dw},
                              {"objective_deviation", df}});
      }
    }
    report["mode"] = "compare";
    report["methods"] = methods;
    report["deviations"] = deviations;
    if (sol.kkt_residual > a.tol) passed = false;
  }

  report["passed"] = passed;
  write_json(join_path(a.out, "report.json"), report);
  m.write(a.out);
  out << (passed ? "agreement within tolerance\n"
                 : "deviation exceeds tolerance\n");
  return passed ? kOk : kComputationFailure;
}

// ---------------------------------------------------------------------------
// convergence-bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string sizes = "512x256";
  std::string betas = "2/3";
  double eps = 0.05;
  std::string seeds = "0";
  int ref_iters = 1000;
  int iters = 0;  // 0: trace every reference iteration
  double sharpness = 1.0;
  double threshold = 1e-8;
  std::string out = "mira-bench";
};

int cmd_convergence_bench(const BenchArgs& a, Manifest& m, std::ostream& out) {
  std::vector<std::pair<Index, Index>> sizes;
  for (const auto& s : split(a.sizes, ',')) sizes.push_back(parse_size(s));
  std::vector<double> betas;
  for (const auto& s : split(a.betas, ',')) betas.push_back(parse_number(s));
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split(a.seeds, ',')) {
    const double v = io::parse_double(s);
    if (v < 0 || v != std::floor(v))
      throw io::ParseError("invalid seed '" + s + "'");
    seeds.push_back(static_cast<std::uint64_t>(v));
  }
  if (sizes.empty() || betas.empty() || seeds.empty())
    throw ParameterError("--sizes, --betas and --seeds must be non-empty");
  for (double b : betas) {
    SolverConfig c;
    c.beta = b;
    c.validate();
  }
  if (!(a.eps > 0.0)) throw ParameterError("--eps must be > 0");
  if (a.ref_iters < 1) throw ParameterError("--ref-iters must be >= 1");
  const int iters = a.iters > 0 ? a.iters : a.ref_iters;
  if (iters > a.ref_iters)
    throw ParameterError("--iters must not exceed --ref-iters");
  if (!(a.sharpness >= 0.0)) throw ParameterError("--sharpness must be >= 0");

  m.config = {{"sizes", a.sizes},         {"betas", betas},
              {"eps", a.eps},             {"seeds", seeds},
              {"ref_iters", a.ref_iters}, {"iters", iters},
              {"sharpness", a.sharpness}, {"threshold", a.threshold}};
  m.seed = seeds.front();
  ensure_dir(a.out);

  json runs = json::array();
  for (const auto& [rows, cols] : sizes) {
    for (std::size_t bi = 0; bi < betas.size(); ++bi) {
      for (const auto seed : seeds) {
        const ProbMatrix p = random_instance(rows, cols, a.sharpness, seed);
        TraceOptions opt;
        opt.beta = betas[bi];
        opt.epsilon = a.eps;
        for (const Method method : {Method::kMira, Method::kSinkhorn}) {
          const auto trace = convergence_trace(method, p, iters, a.ref_iters, opt);
          const std::string file = std::to_string(rows) + "x" +
                                   std::to_string(cols) + "_beta" +
                                   io::format_double(betas[bi]) + "_seed" +
                                   std::to_string(seed) + "_" +
                                   std::string(to_string(method)) + ".csv";
          io::write_file(join_path(a.out, file), trace_csv(trace));
          const auto hit = iterations_to(trace, a.threshold);
          runs.push_back({{"file", file},
                          {"method", to_string(method)},
                          {"rows", rows},
                          {"cols", cols},
                          {"beta", betas[bi]},
                          {"epsilon", a.eps},
                          {"seed", seed},
                          {"iterations_to_threshold",
                           hit ? json(*hit) : json(nullptr)},
                          {"final_sse_to_reference",
                           trace.back().sse_to_reference}});
          out << file << ": iterations to " << io::format_double(a.threshold)
              << " = " << (hit ? std::to_string(*hit) : "not reached") << "\n";
        }
      }
    }
  }
  write_json(join_path(a.out, "summary.json"),
             {{"schema_version", io::kSchemaVersion},
              {"threshold", a.threshold},
              {"runs", runs}});
  m.write(a.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// train-toy
// ---------------------------------------------------------------------------

struct DataConfig {
  Index samples = 2048;
  int clusters = 4;
  Index dim = 2;
  double spread = 0.15;
  std::optional<std::uint64_t> seed;  // defaults to the training seed
};

struct TrainArgs {
  std::string config;
  std::optional<double> learning_rate;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise;
  std::string out = "mira-train";
};

template <class T>
void read_field(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void load_train_config(const std::string& path, DataConfig& data,
                       trainer::TrainConfig& cfg) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw io::ParseError(path + ": invalid JSON: " + e.what());
  }
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      read_field(d, "samples", data.samples);
      read_field(d, "clusters", data.clusters);
      read_field(d, "dim", data.dim);
      read_field(d, "spread", data.spread);
      if (d.contains("seed")) data.seed = d.at("seed").get<std::uint64_t>();
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read_field(t, "tau_s", cfg.tau_s);
      read_field(t, "tau_t", cfg.tau_t);
      read_field(t, "beta_start", cfg.beta_start);
      read_field(t, "beta_end", cfg.beta_end);
      read_field(t, "ema_start", cfg.ema_start);
      read_field(t, "ema_end", cfg.ema_end);
      read_field(t, "learning_rate", cfg.learning_rate);
      read_field(t, "epochs", cfg.epochs);
      read_field(t, "batch_size", cfg.batch_size);
      read_field(t, "fp_iters", cfg.fp_iters);
      read_field(t, "augment_noise", cfg.augment_noise);
      read_field(t, "embed_dim", cfg.embed_dim);
      read_field(t, "num_prototypes", cfg.num_prototypes);
      read_field(t, "seed", cfg.seed);
    }
  } catch (const json::exception& e) {
    throw io::ParseError(path + ": " + e.what());
  }
}

json config_to_json(const DataConfig& d, const trainer::TrainConfig& c) {
  return {{"data",
           {{"samples", d.samples},
            {"clusters", d.clusters},
            {"dim", d.dim},
            {"spread", d.spread},
            {"seed", d.seed.value_or(c.seed)}}},
          {"train",
           {{"tau_s", c.tau_s},
            {"tau_t", c.tau_t},
            {"beta_start", c.beta_start},
            {"beta_end", c.beta_end},
            {"ema_start", c.ema_start},
            {"ema_end", c.ema_end},
            {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"fp_iters", c.fp_iters},
            {"augment_noise", c.augment_noise},
            {"embed_dim", c.embed_dim},
            {"num_prototypes", c.num_prototypes},
            {"seed", c.seed}}}};
}

std::string history_csv(const std::vector<trainer::EpochRecord>& history) {
  std::string s = "epoch,loss,marg_entropy,min_marg_entropy,mi,accuracy\n";
  for (const auto& r : history) {
    s += std::to_string(r.epoch) + ',' + io::format_double(r.loss) + ',' +
         io::format_double(r.marg_entropy) + ',' +
         io::format_double(r.min_marg_entropy) + ',' + io::format_double(r.mi) +
         ',' + io::format_double(r.accuracy) + '\n';
  }
  return s;
}

int cmd_train_toy(const TrainArgs& a, Manifest& m, std::ostream& out,
                  std::ostream& err) {
  DataConfig data;
  trainer::TrainConfig cfg;
  if (!a.config.empty()) {
    load_train_config(a.config, data, cfg);
    m.add_input(a.config);
  }
  if (a.learning_rate) cfg.learning_rate = *a.learning_rate;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.seed) cfg.seed = *a.seed;
  if (a.noise) cfg.augment_noise = *a.noise;
  cfg.validate();

  m.config = config_to_json(data, cfg);
  m.seed = cfg.seed;
  const auto ds = trainer::generate_blobs(data.samples, data.clusters, data.dim,
                                          data.spread,
                                          data.seed.value_or(cfg.seed));
  ensure_dir(a.out);
  try {
    const auto result = trainer::train(ds, cfg);
    io::write_file(join_path(a.out, "history.csv"), history_csv(result.history));
    const auto& s = result.state;
    write_json(join_path(a.out, "checkpoint.json"),
               {{"schema_version", io::kSchemaVersion},
                {"projection", io::matrix_to_json(s.projection)},
                {"prototypes", io::matrix_to_json(s.prototypes)},
                {"ema_projection", io::matrix_to_json(s.ema_projection)},
                {"ema_prototypes", io::matrix_to_json(s.ema_prototypes)},
                {"final_beta", result.final_beta},
                {"final_momentum", result.final_momentum}});
    m.write(a.out);
    const auto& last = result.history.back();
    out << "trained " << cfg.epochs << " epochs, final loss "
        << io::format_double(last.loss) << ", accuracy "
        << io::format_double(last.accuracy) << "\n";
    return kOk;
  } catch (const trainer::DivergenceError& e) {
    io::write_file(join_path(a.out, "history.csv"), history_csv(e.history()));
    m.write(a.out);
    err << "error: training diverged: " << e.what() << "\n";
    return kComputationFailure;
  }
}

// ---------------------------------------------------------------------------
// generate / info
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string size = "4x3";
  double sharpness = 1.0;
  std::uint64_t seed = 0;
  bool logits = false;
  std::string output;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const auto [rows, cols] = parse_size(a.size);
  if (!(a.sharpness >= 0.0)) throw ParameterError("--sharpness must be >= 0");
  const RowMatrix m = a.logits
                          ? random_cosine_logits(rows, cols, 16, a.seed).values()
                          : random_instance(rows, cols, a.sharpness, a.seed).values();
  io::write_matrix(a.output, m);
  out << "wrote " << rows << "x" << cols << " matrix to " << a.output << "\n";
  return kOk;
}

int cmd_info(std::ostream& out) {
  const SolverConfig s;
  const SinkhornConfig k;
  const trainer::TrainConfig t;
  const json j = {{"tool", "mira"},
                  {"version", kVersion},
                  {"schema_version", io::kSchemaVersion},
                  {"solver_defaults",
                   {{"beta", s.beta},
                    {"tau_t", s.tau_t},
                    {"iters", s.max_iters},
                    {"tol", s.tol}}},
                  {"sinkhorn_defaults",
                   {{"epsilon", k.epsilon}, {"ref_iters", k.ref_iters}}},
                  {"train_defaults", config_to_json(DataConfig{}, t)}};
  out << j.dump(2) << "\n";
  return kOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err, int depth);

int cmd_replay(const std::string& manifest_path, const std::string& out_dir,
               std::ostream& out, std::ostream& err, int depth) {
  if (depth > 0) throw UsageError("replay cannot be nested");
  json j;
  try {
    j = json::parse(io::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw io::ParseError(manifest_path + ": invalid JSON: " + e.what());
  }
  if (!j.contains("argv") || !j.at("argv").is_array())
    throw io::ParseError(manifest_path + ": missing argv");
  auto argv = j.at("argv").get<std::vector<std::string>>();
  if (j.contains("inputs")) {
    for (const auto& [path, digest] : j.at("inputs").items()) {
      if (file_sha256(path) != digest.get<std::string>())
        throw UsageError("input " + path + " changed since the manifest was written");
    }
  }
  argv.push_back("--out");
  argv.push_back(out_dir);
  return dispatch(argv, out, err, depth + 1);
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err, int depth) {
  CLI::App app{"MIRA: mutual-information-regularized pseudo-label assignment",
               "mira"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  SolveArgs solve_args;
  auto* solve_cmd = app.add_subcommand("solve", "Solve the assignment problem");
  solve_cmd->add_option("input", solve_args.input, "CSV or JSON matrix")->required();
  solve_cmd->add_option("--beta", solve_args.beta, "Trade-off in [0,1), fractions allowed")
      ->capture_default_str();
  solve_cmd->add_option("--tau-t", solve_args.tau_t, "Target temperature (with --logits)")
      ->capture_default_str();
  solve_cmd->add_option("--iters", solve_args.iters, "Fixed-point iterations")
      ->capture_default_str();
  solve_cmd->add_option("--tol", solve_args.tol, "Early-exit step SSE, 0 disables")
      ->capture_default_str();
  solve_cmd->add_flag("--logits", solve_args.logits, "Treat input as logits");
  solve_cmd->add_option("--seed", solve_args.seed, "Recorded in the manifest")
      ->capture_default_str();
  solve_cmd->add_option("--out,-o", solve_args.out, "Output directory")
      ->capture_default_str();
  solve_cmd->add_flag("--trace", solve_args.trace, "Also write trace.csv");
  solve_cmd->add_option("--ref-iters", solve_args.ref_iters,
                        "Reference iterations for --trace")
      ->capture_default_str();

  OracleArgs oracle_args;
  auto* oracle_cmd = app.add_subcommand(
      "oracle-check", "Compare the solver against independent oracles");
  oracle_cmd->add_option("input", oracle_args.input, "Model probabilities P")
      ->required();
  oracle_cmd->add_option("--beta", oracle_args.beta, "Trade-off in [0,1)")
      ->capture_default_str();
  oracle_cmd->add_option("--tol", oracle_args.tol, "Agreement tolerance")
      ->capture_default_str();
  oracle_cmd->add_option("--iters", oracle_args.iters, "Fixed-point iterations")
      ->capture_default_str();
  oracle_cmd->add_option("--verify-only", oracle_args.verify_only,
                         "Certify a candidate assignment instead");
  oracle_cmd->add_option("--grid-resolution", oracle_args.grid_resolution,
                         "Coarse grid spacing of the grid oracle")
      ->capture_default_str();
  oracle_cmd->add_option("--out,-o", oracle_args.out, "Output directory")
      ->capture_default_str();

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand(
      "convergence-bench", "Trace MIRA and Sinkhorn convergence");
  bench_cmd->add_option("--sizes", bench_args.sizes, "Comma list of BxK")
      ->capture_default_str();
  bench_cmd->add_option("--betas", bench_args.betas, "Comma list of betas")
      ->capture_default_str();
  bench_cmd->add_option("--eps", bench_args.eps, "Sinkhorn temperature")
      ->capture_default_str();
  bench_cmd->add_option("--seeds", bench_args.seeds, "Comma list of seeds")
      ->capture_default_str();
  bench_cmd->add_option("--ref-iters", bench_args.ref_iters, "Reference iterations")
      ->capture_default_str();
  bench_cmd->add_option("--iters", bench_args.iters,
                        "Traced iterations, 0 means --ref-iters")
      ->capture_default_str();
  bench_cmd->add_option("--sharpness", bench_args.sharpness,
                        "Logit scale of the random instances")
      ->capture_default_str();
  bench_cmd->add_option("--threshold", bench_args.threshold,
                        "SSE level reported in the summary")
      ->capture_default_str();
  bench_cmd->add_option("--out,-o", bench_args.out, "Output directory")
      ->capture_default_str();

  TrainArgs train_args;
  auto* train_cmd =
      app.add_subcommand("train-toy", "Train a toy clustering model");
  train_cmd->add_option("--config", train_args.config, "JSON configuration");
  train_cmd->add_option("--learning-rate", train_args.learning_rate);
  train_cmd->add_option("--epochs", train_args.epochs);
  train_cmd->add_option("--batch-size", train_args.batch_size);
  train_cmd->add_option("--seed", train_args.seed);
  train_cmd->add_option("--noise", train_args.noise, "Augmentation noise");
  train_cmd->add_option("--out,-o", train_args.out, "Output directory")
      ->capture_default_str();

  GenerateArgs gen_args;
  auto* gen_cmd =
      app.add_subcommand("generate", "Write a seeded random instance");
  gen_cmd->add_option("output", gen_args.output, "Output path (.json or CSV)")
      ->required();
  gen_cmd->add_option("--size", gen_args.size, "BxK")->capture_default_str();
  gen_cmd->add_option("--sharpness", gen_args.sharpness, "Logit scale")
      ->capture_default_str();
  gen_cmd->add_option("--seed", gen_args.seed)->capture_default_str();
  gen_cmd->add_flag("--logits", gen_args.logits,
                    "Write cosine logits instead of probabilities");

  auto* info_cmd = app.add_subcommand("info", "Print version and defaults");

  std::string manifest_path;
  std::string replay_out = "mira-replay";
  auto* replay_cmd =
      app.add_subcommand("replay", "Re-run a command from its manifest");
  replay_cmd->add_option("manifest", manifest_path, "manifest.json")->required();
  replay_cmd->add_option("--out,-o", replay_out, "Output directory")
      ->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }

  Manifest manifest;
  manifest.argv = strip_out(args);
  try {
    if (solve_cmd->parsed()) {
      manifest.command = "solve";
      return cmd_solve(solve_args, manifest, out);
    }
    if (oracle_cmd->parsed()) {
      manifest.command = "oracle-check";
      return cmd_oracle_check(oracle_args, manifest, out, err);
    }
    if (bench_cmd->parsed()) {
      manifest.command = "convergence-bench";
      return cmd_convergence_bench(bench_args, manifest, out);
    }
    if (train_cmd->parsed()) {
      manifest.command = "train-toy";
      return cmd_train_toy(train_args, manifest, out, err);
    }
    if (gen_cmd->parsed()) return cmd_generate(gen_args, out);
    if (info_cmd->parsed()) return cmd_info(out);
    if (replay_cmd->parsed())
      return cmd_replay(manifest_path, replay_out, out, err, depth);
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const io::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kComputationFailure;
  }
  return kUsageError;
}

}  // namespace

std::string file_sha256(const std::string& path) {
  const std::string bytes = io::read_file(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw Error("SHA-256 failed for " + path);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xf];
  }
  return hex;
}

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  return dispatch(args, out, err, 0);
}

}  // namespace mira::cli
