#include "cli.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>

#include "CLI11.hpp"
#include "crfrefine/config_json.hpp"
#include "crfrefine/dataset.hpp"
#include "crfrefine/error.hpp"
#include "crfrefine/experiments.hpp"
#include "crfrefine/inference.hpp"
#include "crfrefine/kernels.hpp"
#include "crfrefine/neighborhood.hpp"
#include "crfrefine/parallel.hpp"
#include "crfrefine/potentials.hpp"
#include "crfrefine/service.hpp"
#include "json.hpp"

namespace crfrefine::cli {

namespace fs = std::filesystem;
using nlohmann::json;

double BenchResult::mean_seconds() const {
  if (iteration_seconds.empty()) return 0.0;
  return std::accumulate(iteration_seconds.begin(), iteration_seconds.end(), 0.0) /
         static_cast<double>(iteration_seconds.size());
}

double BenchResult::max_seconds() const {
  return iteration_seconds.empty() ? 0.0 : *std::max_element(iteration_seconds.begin(), iteration_seconds.end());
}

BenchResult run_bench(const BenchOptions& options) {
  if (options.n < 2 || options.classes < 2 || options.classes > options.n) {
    throw Error(ErrorCode::invalid_argument, "bench needs n >= classes >= 2");
  }
  SyntheticSpec spec;
  spec.num_classes = options.classes;
  spec.patches_per_class = (options.n + options.classes - 1) / options.classes;
  spec.dim_unary = std::max(options.dim, options.classes + 1);
  spec.dim_pairwise = options.dim;
  spec.seed = options.seed;
  const Dataset dataset = generate_synthetic(spec).dataset;

  BenchResult result;
  result.n = dataset.num_patches();
  using clock = std::chrono::steady_clock;
  IndexConfig index_config;
  index_config.k_base = options.k_base;
  index_config.k_ann = options.k_ann;
  index_config.pool_factor = options.pool_factor;
  index_config.seed = options.seed;
  auto start = clock::now();
  auto index = std::make_shared<const NeighborhoodIndex>(build_index(dataset.pairwise_embeddings, index_config));
  result.index_seconds = std::chrono::duration<double>(clock::now() - start).count();

  EngineConfig config;
  start = clock::now();
  UnaryField unary = compute_unary(dataset.unary_embeddings, dataset.text, config.temperature);
  result.unary_seconds = std::chrono::duration<double>(clock::now() - start).count();

  const AnnotationSet annotations =
      sample_random(*dataset.labels, dataset.num_classes(), std::min(options.annotations, result.n), options.seed);
  Engine engine(std::move(unary), std::move(index), config, annotations);
  for (std::size_t i = 0; i < options.iterations; ++i) result.iteration_seconds.push_back(engine.step().seconds);
  return result;
}

namespace {

struct StrategyFlags {
  std::string kind = "none";
  std::size_t budget = 0;
};

void add_engine_flags(CLI::App& app, EngineConfig& c) {
  app.add_option("--alpha", c.weights.alpha, "weight of the base pairwise term")->capture_default_str();
  app.add_option("--beta", c.weights.beta, "weight of the annotation term")->capture_default_str();
  app.add_option("--temperature", c.temperature, "unary softmax temperature")->capture_default_str();
  app.add_option("--max-iterations", c.max_iterations, "mean-field iterations")->capture_default_str();
  app.add_option("--tol", c.convergence_tol, "stop when max |dQ| falls below this")->capture_default_str();
  app.add_option("--damping", c.damping, "fraction of the previous beliefs kept per step")->capture_default_str();
  app.add_option("--clamp-annotations", c.clamp_annotations, "fix annotated beliefs to one-hot")
      ->capture_default_str();
}

void add_index_flags(CLI::App& app, IndexConfig& c, std::string& term) {
  app.add_option("--k-base", c.k_base, "sampled base neighbors per vertex")->capture_default_str();
  app.add_option("--k-ann", c.k_ann, "sampled neighbors per annotated vertex")->capture_default_str();
  app.add_option("--pool-factor", c.pool_factor, "candidate pool size as a multiple of k")->capture_default_str();
  app.add_option("--seed", c.seed, "seed for all randomness")->capture_default_str();
  app.add_option("--pairwise-term", term, "diversity or smoothing")->capture_default_str();
}

void add_strategy_flags(CLI::App& app, StrategyFlags& s) {
  app.add_option("--strategy", s.kind, "none, random or error_based")->capture_default_str();
  app.add_option("--budget", s.budget, "annotations to place")->capture_default_str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, fmt::format("cannot write {}", path.string()));
  out << text;
}

json argv_json(const std::vector<std::string>& args) { return json(args); }

void write_outputs(const fs::path& dir, const ExperimentReport& report, json snapshot) {
  fs::create_directories(dir);
  write_labels(report.predictions, dir / "predictions.txt");
  std::ofstream csv(dir / "report.csv");
  if (!csv) throw Error(ErrorCode::io, fmt::format("cannot write {}", (dir / "report.csv").string()));
  write_reports_csv(csv, std::span(&report, 1));
  write_text(dir / "config.json", snapshot.dump(2) + "\n");
}

std::shared_ptr<const NeighborhoodIndex> make_index(const Dataset& dataset, const IndexConfig& config) {
  return std::make_shared<const NeighborhoodIndex>(build_index(dataset.pairwise_embeddings, config));
}

void print_summary(std::ostream& out, const ExperimentReport& r) {
  fmt::print(out, "method={} strategy={} budget={} accuracy={:.6f} accuracy_excl_annotated={:.6f} iterations={}\n",
             to_string(r.method), r.strategy, r.budget, r.accuracy, r.accuracy_excl_annotated, r.iterations);
}

int serve(ServiceConfig config, std::ostream& out) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  HttpService service(std::move(config));
  const int port = service.start();
  if (port < 0) {
    throw Error(ErrorCode::io, fmt::format("cannot listen on {}:{}", service.config().host, service.config().port));
  }
  fmt::print(out, "listening on {}:{}\n", service.config().host, port);
  out.flush();
  int received = 0;
  sigwait(&signals, &received);
  service.stop();
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CRF mean-field refinement of zero-shot patch classifications", "crfrefine"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  std::string kernel_name = "auto";
  app.add_option("--threads", threads, "worker threads (0 = hardware concurrency)");
  app.add_option("--kernels", kernel_name, "auto, scalar, avx2 or neon");

  EngineConfig engine;
  IndexConfig index;
  std::string term = "diversity";
  StrategyFlags strategy;
  std::string manifest;
  std::string out_dir;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  SyntheticSpec spec;
  synth->add_option("--out", out_dir, "dataset directory")->required();
  synth->add_option("--classes", spec.num_classes)->capture_default_str();
  synth->add_option("--patches-per-class", spec.patches_per_class)->capture_default_str();
  synth->add_option("--dim-unary", spec.dim_unary)->capture_default_str();
  synth->add_option("--dim-pairwise", spec.dim_pairwise)->capture_default_str();
  synth->add_option("--cluster-separation", spec.cluster_separation)->capture_default_str();
  synth->add_option("--unary-noise", spec.unary_noise)->capture_default_str();
  synth->add_option("--unary-common-component", spec.unary_common_component)->capture_default_str();
  synth->add_option("--unary-jitter", spec.unary_jitter)->capture_default_str();
  synth->add_option("--seed", spec.seed)->capture_default_str();

  auto* refine_cmd = app.add_subcommand("refine", "refine zero-shot predictions");
  refine_cmd->add_option("--manifest", manifest, "dataset manifest")->required();
  refine_cmd->add_option("--out", out_dir, "output directory")->required();
  add_engine_flags(*refine_cmd, engine);
  add_index_flags(*refine_cmd, index, term);
  add_strategy_flags(*refine_cmd, strategy);

  auto* lp_cmd = app.add_subcommand("lp", "label propagation baseline");
  LpConfig lp;
  std::string solver = "closed_form";
  lp_cmd->add_option("--manifest", manifest, "dataset manifest")->required();
  lp_cmd->add_option("--out", out_dir, "output directory")->required();
  lp_cmd->add_option("--alpha-lp", lp.alpha_lp)->capture_default_str();
  lp_cmd->add_option("--k-graph", lp.k_graph)->capture_default_str();
  lp_cmd->add_option("--solver", solver, "closed_form or iterative")->capture_default_str();
  lp_cmd->add_option("--iter-tol", lp.iter_tol)->capture_default_str();
  lp_cmd->add_option("--iter-max", lp.iter_max)->capture_default_str();
  lp_cmd->add_option("--closed-form-max-n", lp.closed_form_max_n)->capture_default_str();
  lp_cmd->add_option("--temperature", engine.temperature, "temperature for error-based sampling")
      ->capture_default_str();
  lp_cmd->add_option("--seed", index.seed, "annotation sampling seed")->capture_default_str();
  add_strategy_flags(*lp_cmd, strategy);

  auto* hitl_cmd = app.add_subcommand("hitl", "oracle-in-the-loop refinement");
  std::size_t per_round = 5;
  std::size_t hitl_budget = 0;
  hitl_cmd->add_option("--manifest", manifest, "dataset manifest")->required();
  hitl_cmd->add_option("--out", out_dir, "output directory")->required();
  hitl_cmd->add_option("--per-round", per_round)->capture_default_str();
  hitl_cmd->add_option("--budget", hitl_budget)->capture_default_str();
  add_engine_flags(*hitl_cmd, engine);
  add_index_flags(*hitl_cmd, index, term);

  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
  std::string grid_path;
  ablate_cmd->add_option("--manifest", manifest, "dataset manifest")->required();
  ablate_cmd->add_option("--grid", grid_path, "grid JSON file")->required();
  ablate_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP session service");
  ServiceConfig service;
  try {
    apply_service_env(service);
  } catch (const std::exception& e) {
    fmt::print(err, "error: invalid service environment: {}\n", e.what());
    return 1;
  }
  serve_cmd->add_option("--host", service.host)->capture_default_str();
  serve_cmd->add_option("--port", service.port)->capture_default_str();
  serve_cmd->add_option("--max-n", service.limits.max_n)->capture_default_str();
  serve_cmd->add_option("--max-sessions", service.limits.max_sessions)->capture_default_str();
  serve_cmd->add_option("--beliefs-max-cells", service.beliefs_max_cells)->capture_default_str();
  add_engine_flags(*serve_cmd, engine);
  add_index_flags(*serve_cmd, index, term);

  auto* bench_cmd = app.add_subcommand("bench", "time one message-passing iteration");
  BenchOptions bench;
  bench_cmd->add_option("--n", bench.n)->capture_default_str();
  bench_cmd->add_option("--classes", bench.classes)->capture_default_str();
  bench_cmd->add_option("--k", bench.k_base)->capture_default_str();
  bench_cmd->add_option("--k-ann", bench.k_ann)->capture_default_str();
  bench_cmd->add_option("--pool-factor", bench.pool_factor)->capture_default_str();
  bench_cmd->add_option("--dim", bench.dim)->capture_default_str();
  bench_cmd->add_option("--iterations", bench.iterations)->capture_default_str();
  bench_cmd->add_option("--annotations", bench.annotations)->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    fmt::print(err, "error: {}\n\n", e.what());
    const auto& parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return 1;
  }

  try {
    if (threads > 0) set_worker_count(threads);
    if (kernel_name != "auto") {
      const auto level = kernels::parse_level(kernel_name);
      if (!level) throw Error(ErrorCode::invalid_argument, fmt::format("unknown kernel level '{}'", kernel_name));
      if (!kernels::select(*level)) {
        throw Error(ErrorCode::invalid_argument, fmt::format("kernel level '{}' unsupported on this CPU", kernel_name));
      }
    }
    index.base_term = parse_pairwise_term(term);

    if (synth->parsed()) {
      const fs::path path = generate_synthetic(spec, out_dir);
      json snapshot{{"command", "synth"}, {"args", argv_json(args)}, {"spec", spec}};
      write_text(fs::path(out_dir) / "config.json", snapshot.dump(2) + "\n");
      fmt::print(out, "{}\n", path.string());
      return 0;
    }
    if (refine_cmd->parsed()) {
      const Dataset dataset = load_dataset(manifest);
      engine.validate();
      index.validate();
      SamplingStrategy s{parse_strategy(strategy.kind), strategy.budget, 5, index.seed};
      const ExperimentReport report = run_refinement(dataset, make_index(dataset, index), engine, s);
      json snapshot = report.config_snapshot();
      snapshot["command"] = "refine";
      snapshot["manifest"] = fs::absolute(manifest).string();
      snapshot["args"] = argv_json(args);
      write_outputs(out_dir, report, std::move(snapshot));
      print_summary(out, report);
      return 0;
    }
    if (lp_cmd->parsed()) {
      const Dataset dataset = load_dataset(manifest);
      if (solver == "closed_form") {
        lp.solver = LpSolver::closed_form;
      } else if (solver == "iterative") {
        lp.solver = LpSolver::iterative;
      } else {
        throw Error(ErrorCode::invalid_argument, fmt::format("unknown solver '{}'", solver));
      }
      SamplingStrategy s{parse_strategy(strategy.kind), strategy.budget, 5, index.seed};
      const ExperimentReport report = run_lp(dataset, lp, s, engine.temperature);
      json snapshot = report.config_snapshot();
      snapshot["command"] = "lp";
      snapshot["manifest"] = fs::absolute(manifest).string();
      snapshot["args"] = argv_json(args);
      write_outputs(out_dir, report, std::move(snapshot));
      print_summary(out, report);
      return 0;
    }
    if (hitl_cmd->parsed()) {
      const Dataset dataset = load_dataset(manifest);
      engine.validate();
      index.validate();
      const ExperimentReport report =
          run_hitl(dataset, make_index(dataset, index), engine, per_round, hitl_budget, index.seed);
      json snapshot = report.config_snapshot();
      snapshot["command"] = "hitl";
      snapshot["manifest"] = fs::absolute(manifest).string();
      snapshot["args"] = argv_json(args);
      write_outputs(out_dir, report, std::move(snapshot));
      std::ofstream curve(fs::path(out_dir) / "curve.csv");
      curve << "round,accuracy\n";
      for (std::size_t i = 0; i < report.accuracy_curve.size(); ++i) {
        fmt::print(curve, "{},{:.17g}\n", i + 1, report.accuracy_curve[i]);
      }
      print_summary(out, report);
      return 0;
    }
    if (ablate_cmd->parsed()) {
      std::ifstream in(grid_path);
      if (!in) throw Error(ErrorCode::invalid_argument, fmt::format("cannot read grid file {}", grid_path));
      json grid_doc;
      try {
        grid_doc = json::parse(in);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_argument, fmt::format("invalid grid file: {}", e.what()));
      }
      const AblationGrid grid = parse_ablation_grid(grid_doc);
      const Dataset dataset = load_dataset(manifest);
      const auto rows = run_ablation_grid(dataset, grid);
      fs::create_directories(out_dir);
      std::ofstream csv(fs::path(out_dir) / "ablation.csv");
      if (!csv) throw Error(ErrorCode::io, "cannot write ablation.csv");
      write_ablation_csv(csv, rows);
      json snapshot{{"command", "ablate"},
                    {"manifest", fs::absolute(manifest).string()},
                    {"grid", grid_doc},
                    {"kernels", kernels::active().name},
                    {"args", argv_json(args)}};
      write_text(fs::path(out_dir) / "config.json", snapshot.dump(2) + "\n");
      fmt::print(out, "{} rows written to {}\n", rows.size(), (fs::path(out_dir) / "ablation.csv").string());
      return 0;
    }
    if (serve_cmd->parsed()) {
      engine.validate();
      index.validate();
      service.engine = engine;
      service.index = index;
      return serve(std::move(service), out);
    }
    if (bench_cmd->parsed()) {
      const BenchResult r = run_bench(bench);
      fmt::print(out, "n: {}\nclasses: {}\nk: {}\nkernels: {}\nthreads: {}\n", r.n, bench.classes, bench.k_base,
                 kernels::active().name, worker_count());
      fmt::print(out, "index_build_seconds: {:.6f}\nunary_seconds: {:.6f}\n", r.index_seconds, r.unary_seconds);
      fmt::print(out, "seconds_per_iteration: {:.6f}\nmax_seconds_per_iteration: {:.6f}\n", r.mean_seconds(),
                 r.max_seconds());
      return 0;
    }
  } catch (const Error& e) {
    fmt::print(err, "error: {}\n", e.what());
    return e.is_validation() ? 1 : 2;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace crfrefine::cli
