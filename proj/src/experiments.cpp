#include "crfrefine/experiments.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <numeric>

#include "crfrefine/config_json.hpp"
#include "crfrefine/kernels.hpp"
#include "crfrefine/random.hpp"

namespace crfrefine {

using nlohmann::json;

namespace {

constexpr std::uint64_t kRandomStream = 0x72616e64;  // "rand"
constexpr std::uint64_t kErrorStream = 0x6572726f;   // "erro"
constexpr std::uint64_t kHitlStream = 0x6869746c;    // "hitl"

// First `take` entries of a uniform random permutation of `items`.
template <typename T>
void partial_shuffle(std::vector<T>& items, std::size_t take, CounterRng rng) {
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.below(items.size() - i);
    std::swap(items[i], items[j]);
  }
  items.resize(take);
}

std::string format_double(double v) { return fmt::format("{}", v); }

}  // namespace

const char* to_string(StrategyKind kind) noexcept {
  switch (kind) {
    case StrategyKind::none:
      return "none";
    case StrategyKind::random:
      return "random";
    case StrategyKind::error_based:
      return "error_based";
  }
  return "none";
}

StrategyKind parse_strategy(std::string_view name) {
  if (name == "none") return StrategyKind::none;
  if (name == "random") return StrategyKind::random;
  if (name == "error_based" || name == "error-based") return StrategyKind::error_based;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown sampling strategy '{}'", name));
}

const char* to_string(Method method) noexcept {
  switch (method) {
    case Method::zero_shot:
      return "zero_shot";
    case Method::histocrf:
      return "histocrf";
    case Method::lp:
      return "lp";
  }
  return "histocrf";
}

void SamplingStrategy::validate() const {
  if (kind != StrategyKind::none && per_round < 1) {
    throw Error(ErrorCode::invalid_argument, "per_round must be >= 1");
  }
}

AnnotationSet sample_random(std::span<const ClassId> labels, std::size_t num_classes, std::size_t n,
                            std::uint64_t seed) {
  if (n > labels.size()) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("cannot annotate {} of {} vertices", n, labels.size()));
  }
  std::vector<VertexId> vertices(labels.size());
  std::iota(vertices.begin(), vertices.end(), VertexId{0});
  partial_shuffle(vertices, n, CounterRng(seed, kRandomStream, 0, 0));
  AnnotationSet out(labels.size(), num_classes);
  for (VertexId v : vertices) out.set(v, labels[v]);
  return out;
}

ErrorSample sample_error_based(std::span<const ClassId> predictions, std::span<const ClassId> labels,
                               std::size_t num_classes, std::size_t n, std::uint64_t seed,
                               const AnnotationSet* exclude) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::invalid_argument, "predictions and labels differ in length");
  }
  std::vector<VertexId> wrong;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    const auto vertex = static_cast<VertexId>(v);
    if (predictions[v] != labels[v] && !(exclude && exclude->contains(vertex))) wrong.push_back(vertex);
  }
  const std::size_t take = std::min(n, wrong.size());
  partial_shuffle(wrong, take, CounterRng(seed, kErrorStream, 0, 0));
  ErrorSample out{AnnotationSet(labels.size(), num_classes), n - take};
  for (VertexId v : wrong) out.annotations.set(v, labels[v]);
  return out;
}

double accuracy(std::span<const ClassId> predictions, std::span<const ClassId> labels) {
  if (predictions.size() != labels.size() || labels.empty()) {
    throw Error(ErrorCode::invalid_argument, "predictions and labels differ in length");
  }
  std::size_t correct = 0;
  for (std::size_t v = 0; v < labels.size(); ++v) correct += predictions[v] == labels[v] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy_excluding(std::span<const ClassId> predictions, std::span<const ClassId> labels,
                          const AnnotationSet& annotations) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::invalid_argument, "predictions and labels differ in length");
  }
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (annotations.contains(static_cast<VertexId>(v))) continue;
    ++total;
    correct += predictions[v] == labels[v] ? 1 : 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double ExperimentReport::mean_iter_seconds() const {
  if (iteration_seconds.empty()) return 0.0;
  return std::accumulate(iteration_seconds.begin(), iteration_seconds.end(), 0.0) /
         static_cast<double>(iteration_seconds.size());
}

json ExperimentReport::config_snapshot() const {
  json j{{"dataset", dataset},
         {"method", to_string(method)},
         {"strategy", strategy},
         {"budget", budget},
         {"seed", seed},
         {"strategy_seed", strategy_seed},
         {"engine", engine},
         {"index", index},
         {"kernels", kernels::active().name}};
  if (strategy == "hitl") j["per_round"] = per_round;
  if (method == Method::lp) j["lp"] = lp;
  return j;
}

std::shared_ptr<const NeighborhoodIndex> with_seed(std::shared_ptr<const NeighborhoodIndex> index,
                                                   std::uint64_t seed) {
  if (index->config.seed == seed) return index;
  auto copy = std::make_shared<NeighborhoodIndex>(*index);
  copy->config.seed = seed;
  return copy;
}

namespace {

ExperimentReport base_report(const Dataset& dataset, Method method, const EngineConfig& config) {
  ExperimentReport r;
  r.dataset = dataset.name;
  r.method = method;
  r.engine = config;
  return r;
}

// Unlabeled datasets get NaN accuracies; only annotation strategies need labels.
void score(ExperimentReport& r, const Dataset& dataset, const AnnotationSet& annotations) {
  r.annotations_placed = annotations.size();
  if (!dataset.labels) {
    r.accuracy = r.accuracy_excl_annotated = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  r.accuracy = accuracy(r.predictions, *dataset.labels);
  r.accuracy_excl_annotated = accuracy_excluding(r.predictions, *dataset.labels, annotations);
}

AnnotationSet one_shot_annotations(const Dataset& dataset, const UnaryField& unary, const SamplingStrategy& strategy,
                                   std::size_t& shortfall) {
  shortfall = 0;
  if (strategy.kind == StrategyKind::none) return AnnotationSet(dataset.num_patches(), dataset.num_classes());
  const auto& labels = dataset.require_labels();
  switch (strategy.kind) {
    case StrategyKind::none:
      break;
    case StrategyKind::random:
      return sample_random(labels, dataset.num_classes(), strategy.budget, strategy.seed);
    case StrategyKind::error_based: {
      const auto zero_shot = argmax_rows(unary_probabilities(unary));
      ErrorSample s = sample_error_based(zero_shot, labels, dataset.num_classes(), strategy.budget, strategy.seed);
      shortfall = s.shortfall;
      return std::move(s.annotations);
    }
  }
  return {};
}

}  // namespace

ExperimentReport run_zero_shot(const Dataset& dataset, const EngineConfig& config) {
  ExperimentReport r = base_report(dataset, Method::zero_shot, config);
  const UnaryField unary = compute_unary(dataset.unary_embeddings, dataset.text, config.temperature);
  r.predictions = argmax_rows(unary_probabilities(unary));
  r.converged = true;
  score(r, dataset, AnnotationSet(dataset.num_patches(), dataset.num_classes()));
  return r;
}

ExperimentReport run_refinement(const Dataset& dataset, std::shared_ptr<const NeighborhoodIndex> index,
                                const EngineConfig& config, const SamplingStrategy& strategy) {
  config.validate();
  strategy.validate();
  ExperimentReport r = base_report(dataset, Method::histocrf, config);
  r.index = index->config;
  r.seed = index->config.seed;
  r.strategy = to_string(strategy.kind);
  r.budget = strategy.kind == StrategyKind::none ? 0 : strategy.budget;
  r.strategy_seed = strategy.seed;

  const UnaryField unary = compute_unary(dataset.unary_embeddings, dataset.text, config.temperature);
  const AnnotationSet annotations = one_shot_annotations(dataset, unary, strategy, r.shortfall);
  RefinementResult result = refine(unary, std::move(index), annotations, config);
  r.predictions = std::move(result.predictions);
  r.iterations = result.iterations_run;
  r.iteration_seconds = std::move(result.per_iteration_seconds);
  r.converged = result.converged;
  score(r, dataset, annotations);
  return r;
}

ExperimentReport run_hitl(const Dataset& dataset, std::shared_ptr<const NeighborhoodIndex> index,
                          const EngineConfig& config, std::size_t per_round, std::size_t budget, std::uint64_t seed) {
  config.validate();
  if (per_round < 1) throw Error(ErrorCode::invalid_argument, "per_round must be >= 1");
  const auto& labels = dataset.require_labels();
  ExperimentReport r = base_report(dataset, Method::histocrf, config);
  r.index = index->config;
  r.seed = index->config.seed;
  r.strategy = budget == 0 ? "none" : "hitl";
  r.budget = budget;
  r.per_round = per_round;
  r.strategy_seed = seed;

  Engine engine(compute_unary(dataset.unary_embeddings, dataset.text, config.temperature), std::move(index), config);
  std::size_t placed = 0;
  std::size_t rounds = 0;

  // Returns false once the budget is spent or no misclassified vertex is left.
  const auto annotate_round = [&]() {
    const std::size_t want = std::min(per_round, budget - placed);
    const ErrorSample s = sample_error_based(engine.predictions(), labels, dataset.num_classes(), want,
                                             mix64(seed ^ kHitlStream) + rounds, &engine.annotations());
    for (const auto& [v, label] : s.annotations.entries()) engine.apply_annotation(v, label);
    placed += s.annotations.size();
    ++rounds;
    r.accuracy_curve.push_back(accuracy(engine.predictions(), labels));
    return s.shortfall == 0 && placed < budget;
  };

  bool annotating = budget > 0 && annotate_round();
  while (annotating) {
    const StepStats s = engine.step();
    r.iteration_seconds.push_back(s.seconds);
    annotating = annotate_round();
  }
  r.shortfall = budget - placed;

  for (std::size_t t = 0; t < config.max_iterations; ++t) {
    const StepStats s = engine.step();
    r.iteration_seconds.push_back(s.seconds);
    if (s.max_delta < config.convergence_tol) {
      r.converged = true;
      break;
    }
  }
  r.iterations = r.iteration_seconds.size();
  r.annotation_rounds = rounds;
  r.predictions = engine.predictions();
  score(r, dataset, engine.annotations());
  return r;
}

ExperimentReport run_lp(const Dataset& dataset, const LpConfig& config, const SamplingStrategy& strategy,
                        double temperature) {
  config.validate();
  strategy.validate();
  EngineConfig engine;
  engine.temperature = temperature;
  ExperimentReport r = base_report(dataset, Method::lp, engine);
  r.lp = config;
  r.seed = strategy.seed;
  r.strategy_seed = strategy.seed;
  r.strategy = to_string(strategy.kind);
  r.budget = strategy.budget;
  const UnaryField unary = compute_unary(dataset.unary_embeddings, dataset.text, temperature);
  const AnnotationSet annotations = one_shot_annotations(dataset, unary, strategy, r.shortfall);
  const LpResult lp = label_propagation(dataset.pairwise_embeddings, annotations, dataset.num_classes(), config);
  r.predictions = lp.predictions;
  r.iterations = lp.iterations;
  r.converged = lp.converged;
  score(r, dataset, annotations);
  return r;
}

ExperimentReport mean_over_seeds(std::span<const ExperimentReport> reports) {
  if (reports.empty()) throw Error(ErrorCode::invalid_argument, "no reports to average");
  ExperimentReport mean = reports.front();
  mean.is_seed_mean = true;
  mean.predictions.clear();
  mean.accuracy_curve.clear();
  double acc = 0.0, acc_excl = 0.0, iters = 0.0, secs = 0.0;
  for (const auto& r : reports) {
    acc += r.accuracy;
    acc_excl += r.accuracy_excl_annotated;
    iters += static_cast<double>(r.iterations);
    secs += r.mean_iter_seconds();
  }
  const auto count = static_cast<double>(reports.size());
  mean.accuracy = acc / count;
  mean.accuracy_excl_annotated = acc_excl / count;
  mean.iterations = static_cast<std::size_t>(std::llround(iters / count));
  mean.iteration_seconds = {secs / count};
  return mean;
}

std::vector<AblationCell> AblationGrid::cells() const {
  std::vector<AblationCell> out;
  for (PairwiseTerm t : terms) {
    for (std::size_t k : k_base) {
      for (bool b : beta_on) {
        for (double a : alpha) out.push_back({t, k, b, a});
      }
    }
  }
  return out;
}

AblationGrid parse_ablation_grid(const json& doc) {
  AblationGrid g;
  try {
    if (doc.contains("pairwise_term")) {
      g.terms.clear();
      for (const auto& t : doc["pairwise_term"]) g.terms.push_back(parse_pairwise_term(t.get<std::string>()));
    }
    if (doc.contains("k_base")) g.k_base = doc["k_base"].get<std::vector<std::size_t>>();
    if (doc.contains("beta_on")) g.beta_on = doc["beta_on"].get<std::vector<bool>>();
    if (doc.contains("alpha")) g.alpha = doc["alpha"].get<std::vector<double>>();
    if (doc.contains("seeds")) g.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
    if (doc.contains("engine")) doc["engine"].get_to(g.engine);
    if (doc.contains("index")) doc["index"].get_to(g.index);
    if (doc.contains("strategy")) {
      const auto& s = doc["strategy"];
      if (s.contains("kind")) g.strategy.kind = parse_strategy(s["kind"].get<std::string>());
      if (s.contains("budget")) g.strategy.budget = s["budget"].get<std::size_t>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, fmt::format("invalid ablation grid: {}", e.what()));
  }
  if (g.terms.empty() || g.k_base.empty() || g.beta_on.empty() || g.alpha.empty() || g.seeds.empty()) {
    throw Error(ErrorCode::invalid_argument, "invalid ablation grid: every axis needs at least one value");
  }
  return g;
}

std::vector<AblationRow> run_ablation_grid(const Dataset& dataset, const AblationGrid& grid) {
  std::vector<AblationRow> rows;
  for (PairwiseTerm term : grid.terms) {
    for (std::size_t k : grid.k_base) {
      IndexConfig ic = grid.index;
      ic.base_term = term;
      ic.k_base = k;
      auto index = std::make_shared<const NeighborhoodIndex>(build_index(dataset.pairwise_embeddings, ic));
      const AnnotationSet none(dataset.num_patches(), dataset.num_classes());
      const std::size_t bytes = index->memory_bytes() + resample(*index, none, 0).memory_bytes();
      for (bool beta_on : grid.beta_on) {
        for (double alpha : grid.alpha) {
          EngineConfig ec = grid.engine;
          ec.weights.alpha = alpha;
          if (!beta_on) ec.weights.beta = 0.0;
          for (std::uint64_t seed : grid.seeds) {
            SamplingStrategy strategy = grid.strategy;
            strategy.seed = seed;
            rows.push_back({{term, k, beta_on, alpha}, run_refinement(dataset, with_seed(index, seed), ec, strategy),
                            bytes});
          }
        }
      }
    }
  }
  return rows;
}

std::string reports_csv_header() {
  return "dataset,method,strategy,budget,seed,accuracy,accuracy_excl_annotated,iterations,mean_iter_seconds,alpha,"
         "beta,k_base,k_ann,pool_factor,temperature";
}

std::string report_csv_line(const ExperimentReport& r) {
  const bool lp = r.method == Method::lp;
  const std::string seed = r.is_seed_mean ? "mean" : std::to_string(r.seed);
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}", r.dataset, to_string(r.method), r.strategy,
                     r.budget, seed, format_double(r.accuracy), format_double(r.accuracy_excl_annotated),
                     r.iterations, format_double(r.mean_iter_seconds()),
                     format_double(lp ? r.lp.alpha_lp : r.engine.weights.alpha),
                     format_double(lp ? 0.0 : r.engine.weights.beta), lp ? r.lp.k_graph : r.index.k_base,
                     lp ? 0 : r.index.k_ann, lp ? 0 : r.index.pool_factor, format_double(r.engine.temperature));
}

void write_reports_csv(std::ostream& out, std::span<const ExperimentReport> reports) {
  out << reports_csv_header() << '\n';
  for (const auto& r : reports) out << report_csv_line(r) << '\n';
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << reports_csv_header() << ",pairwise_term,neighborhood_bytes\n";
  for (const auto& row : rows) {
    out << report_csv_line(row.report) << ',' << to_string(row.cell.term) << ',' << row.neighborhood_bytes << '\n';
  }
}

}  // namespace crfrefine
