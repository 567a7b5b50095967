#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <vector>

#include "crfrefine/core.hpp"
#include "crfrefine/dataset.hpp"
#include "crfrefine/neighborhood.hpp"
#include "crfrefine/potentials.hpp"

namespace crfrefine {

struct EngineConfig {
  PairwiseWeights weights;
  double temperature = 0.01;      // similarities are divided by this before the unary softmax
  std::size_t max_iterations = 10;
  double convergence_tol = 1e-4;  // on max |Q' - Q|
  double damping = 0.0;           // fraction of the previous Q kept
  bool clamp_annotations = true;

  void validate() const;
};

/// One synchronous mean-field update. For every vertex v and label l
///
///   m_v(l) = phi_v(l)
///          + alpha * sum_{w in N_v} E_{Q_w}[base pairwise cost]
///          + beta  * sum_{a annotated, v in M_a} sim(a, v) * [l != label(a)]
///
///   Q'_v = (1 - damping) * softmax(-m_v) + damping * Q_v
///
/// computed entirely from the input Q. Annotated vertices become one-hot when
/// clamping is on. `out` must not alias `q`.
void mean_field_step(const Beliefs& q, const UnaryField& unary, const SampledNeighborhoods& neighborhoods,
                     const AnnotationSet& annotations, const EngineConfig& config, Beliefs& out);

[[nodiscard]] Beliefs mean_field_step(const Beliefs& q, const UnaryField& unary,
                                      const SampledNeighborhoods& neighborhoods, const AnnotationSet& annotations,
                                      const EngineConfig& config);

/// Q0 = softmax(-phi), with annotated rows clamped if requested.
[[nodiscard]] Beliefs initial_beliefs(const UnaryField& unary, const AnnotationSet& annotations, bool clamp);

/// Throws std::logic_error if rows are not distributions or a clamped row is
/// not one-hot. Called after every step when CRFREFINE_INVARIANT_CHECKS is on.
void check_belief_invariants(const Beliefs& q, const AnnotationSet& annotations, bool clamp);

struct AuditRecord {
  std::chrono::system_clock::time_point timestamp;
  VertexId vertex = 0;
  ClassId label = 0;
  std::optional<ClassId> previous;
  std::size_t iteration = 0;  // beliefs iteration at which it was applied
};

struct StepStats {
  std::size_t iteration = 0;  // iteration index after the step
  double max_delta = 0.0;
  double seconds = 0.0;
};

/// Stateful refinement: owns Q and the annotation set, double-buffers the
/// mean-field update, and resamples neighborhoods once per iteration.
class Engine {
 public:
  Engine(UnaryField unary, std::shared_ptr<const NeighborhoodIndex> index, EngineConfig config,
         AnnotationSet annotations = {});

  [[nodiscard]] const Beliefs& beliefs() const noexcept { return q_; }
  [[nodiscard]] std::vector<ClassId> predictions() const;
  [[nodiscard]] const AnnotationSet& annotations() const noexcept { return annotations_; }
  [[nodiscard]] const UnaryField& unary() const noexcept { return unary_; }
  [[nodiscard]] const EngineConfig& config() const noexcept { return config_; }
  [[nodiscard]] const NeighborhoodIndex& index() const noexcept { return *index_; }
  [[nodiscard]] std::size_t iteration() const noexcept { return q_.iteration; }

  /// Inserts or overwrites an annotation; with clamping the vertex's row
  /// becomes one-hot immediately.
  AuditRecord apply_annotation(VertexId vertex, ClassId label);

  /// resample(index, annotations, iteration) followed by one mean-field step.
  StepStats step();

 private:
  UnaryField unary_;
  std::shared_ptr<const NeighborhoodIndex> index_;
  EngineConfig config_;
  AnnotationSet annotations_;
  Beliefs q_;
  Beliefs scratch_;
};

struct RefinementResult {
  Beliefs beliefs;
  std::vector<ClassId> predictions;
  std::size_t iterations_run = 0;
  std::vector<double> per_iteration_seconds;
  bool converged = false;
};

/// Runs steps until max |dQ| < tol or max_iterations steps. max_iterations = 0
/// returns the zero-shot beliefs.
[[nodiscard]] RefinementResult refine(const UnaryField& unary, std::shared_ptr<const NeighborhoodIndex> index,
                                      const AnnotationSet& annotations, const EngineConfig& config);

[[nodiscard]] RefinementResult refine(const Dataset& dataset, std::shared_ptr<const NeighborhoodIndex> index,
                                      const AnnotationSet& annotations, const EngineConfig& config);

}  // namespace crfrefine
