#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "crfrefine/baselines.hpp"
#include "crfrefine/dataset.hpp"
#include "crfrefine/inference.hpp"
#include "crfrefine/neighborhood.hpp"
#include "json.hpp"

namespace crfrefine {

enum class StrategyKind { none, random, error_based };

[[nodiscard]] const char* to_string(StrategyKind kind) noexcept;
[[nodiscard]] StrategyKind parse_strategy(std::string_view name);

struct SamplingStrategy {
  StrategyKind kind = StrategyKind::none;
  std::size_t budget = 0;
  std::size_t per_round = 5;  // HITL only
  std::uint64_t seed = 0;

  void validate() const;
};

/// n distinct vertices uniformly at random, annotated with their true labels.
[[nodiscard]] AnnotationSet sample_random(std::span<const ClassId> labels, std::size_t num_classes, std::size_t n,
                                          std::uint64_t seed);

struct ErrorSample {
  AnnotationSet annotations;
  std::size_t shortfall = 0;  // requested minus placed
};

/// n vertices drawn uniformly from those with prediction != label (skipping
/// any vertex in `exclude`), annotated with their true labels. Takes all of
/// them when fewer than n exist.
[[nodiscard]] ErrorSample sample_error_based(std::span<const ClassId> predictions, std::span<const ClassId> labels,
                                             std::size_t num_classes, std::size_t n, std::uint64_t seed,
                                             const AnnotationSet* exclude = nullptr);

[[nodiscard]] double accuracy(std::span<const ClassId> predictions, std::span<const ClassId> labels);
/// Accuracy over vertices without an annotation; 0 when every vertex is annotated.
[[nodiscard]] double accuracy_excluding(std::span<const ClassId> predictions, std::span<const ClassId> labels,
                                        const AnnotationSet& annotations);

enum class Method { zero_shot, histocrf, lp };
[[nodiscard]] const char* to_string(Method method) noexcept;

struct ExperimentReport {
  std::string dataset;
  Method method = Method::histocrf;
  std::string strategy = "none";  // none | random | error_based | hitl
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  std::uint64_t strategy_seed = 0;  // annotation sampling
  bool is_seed_mean = false;  // aggregate row; seed column reads "mean"
  double accuracy = 0.0;
  double accuracy_excl_annotated = 0.0;
  std::size_t iterations = 0;
  std::vector<double> iteration_seconds;
  std::size_t annotations_placed = 0;
  std::size_t shortfall = 0;
  std::size_t annotation_rounds = 0;
  std::size_t per_round = 0;
  std::vector<double> accuracy_curve;  // HITL: accuracy after each annotation round
  bool converged = false;
  EngineConfig engine;
  IndexConfig index;
  LpConfig lp;
  std::vector<ClassId> predictions;

  [[nodiscard]] double mean_iter_seconds() const;
  /// Everything needed to rerun this cell.
  [[nodiscard]] nlohmann::json config_snapshot() const;
};

/// Copy of `index` with a different resampling seed; returns `index` itself
/// if the seed already matches.
[[nodiscard]] std::shared_ptr<const NeighborhoodIndex> with_seed(std::shared_ptr<const NeighborhoodIndex> index,
                                                                 std::uint64_t seed);

[[nodiscard]] ExperimentReport run_zero_shot(const Dataset& dataset, const EngineConfig& config);

/// One-shot strategies: annotations (random, or error-based against the
/// zero-shot predictions) are placed before refinement. The report seed is
/// the index seed; the strategy seed drives annotation sampling.
[[nodiscard]] ExperimentReport run_refinement(const Dataset& dataset, std::shared_ptr<const NeighborhoodIndex> index,
                                              const EngineConfig& config, const SamplingStrategy& strategy);

/// Oracle-in-the-loop: per_round error-based annotations before the first
/// step and after every step until `budget` annotations are placed (or no
/// unannotated misclassified vertex remains), then up to max_iterations
/// further steps under the usual stop rule.
[[nodiscard]] ExperimentReport run_hitl(const Dataset& dataset, std::shared_ptr<const NeighborhoodIndex> index,
                                        const EngineConfig& config, std::size_t per_round, std::size_t budget,
                                        std::uint64_t seed);

/// Label-propagation baseline; error-based sampling uses the zero-shot
/// predictions at `temperature`.
[[nodiscard]] ExperimentReport run_lp(const Dataset& dataset, const LpConfig& config,
                                      const SamplingStrategy& strategy, double temperature = 0.01);

/// Mean of accuracies and timings over per-seed reports of one cell.
[[nodiscard]] ExperimentReport mean_over_seeds(std::span<const ExperimentReport> reports);

struct AblationCell {
  PairwiseTerm term = PairwiseTerm::diversity;
  std::size_t k_base = 16;
  bool beta_on = true;
  double alpha = 0.1;
};

struct AblationGrid {
  std::vector<PairwiseTerm> terms{PairwiseTerm::diversity};
  std::vector<std::size_t> k_base{16};
  std::vector<bool> beta_on{true};
  std::vector<double> alpha{0.1};
  std::vector<std::uint64_t> seeds{0};
  SamplingStrategy strategy;
  EngineConfig engine;
  IndexConfig index;

  [[nodiscard]] std::vector<AblationCell> cells() const;
};

[[nodiscard]] AblationGrid parse_ablation_grid(const nlohmann::json& doc);

struct AblationRow {
  AblationCell cell;
  ExperimentReport report;
  std::size_t neighborhood_bytes = 0;  // pools plus one iteration's sampled edges
};

/// One report per (cell, seed).
[[nodiscard]] std::vector<AblationRow> run_ablation_grid(const Dataset& dataset, const AblationGrid& grid);

/// Header plus one line per report, columns:
/// dataset,method,strategy,budget,seed,accuracy,accuracy_excl_annotated,iterations,
/// mean_iter_seconds,alpha,beta,k_base,k_ann,pool_factor,temperature
void write_reports_csv(std::ostream& out, std::span<const ExperimentReport> reports);
[[nodiscard]] std::string reports_csv_header();
[[nodiscard]] std::string report_csv_line(const ExperimentReport& report);

/// Report columns followed by pairwise_term and neighborhood_bytes.
void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

}  // namespace crfrefine
