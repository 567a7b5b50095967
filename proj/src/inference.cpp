#include "crfrefine/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

#include "crfrefine/kernels.hpp"
#include "crfrefine/parallel.hpp"

namespace crfrefine {

void EngineConfig::validate() const {
  weights.validate();
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::invalid_argument, "temperature must be positive");
  }
  if (!(convergence_tol > 0.0)) throw Error(ErrorCode::invalid_argument, "convergence tolerance must be positive");
  if (!(damping >= 0.0 && damping < 1.0)) throw Error(ErrorCode::invalid_argument, "damping must lie in [0, 1)");
}

namespace {

void set_one_hot(std::span<double> row, ClassId label) {
  std::fill(row.begin(), row.end(), 0.0);
  row[label] = 1.0;
}

void check_shapes(const Beliefs& q, const UnaryField& unary, const SampledNeighborhoods& nbrs,
                  const AnnotationSet& annotations) {
  if (q.num_vertices() != unary.num_vertices() || q.num_classes() != unary.num_classes() ||
      nbrs.num_vertices() != unary.num_vertices()) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("shape mismatch: Q {}x{}, unary {}x{}, neighborhoods over {} vertices", q.num_vertices(),
                            q.num_classes(), unary.num_vertices(), unary.num_classes(), nbrs.num_vertices()));
  }
  for (const auto& [v, label] : annotations.entries()) {
    if (v >= unary.num_vertices() || label >= unary.num_classes()) {
      throw Error(ErrorCode::out_of_range, fmt::format("annotation ({}, {}) out of range", v, label));
    }
  }
}

}  // namespace

Beliefs initial_beliefs(const UnaryField& unary, const AnnotationSet& annotations, bool clamp) {
  Beliefs q{unary_probabilities(unary), 0};
  if (clamp) {
    for (const auto& [v, label] : annotations.entries()) set_one_hot(q.data.row(v), label);
  }
  return q;
}

void check_belief_invariants(const Beliefs& q, const AnnotationSet& annotations, bool clamp) {
  if (auto problem = check_row_stochastic(q.data, 1e-9)) {
    throw std::logic_error(fmt::format("belief invariant violated at iteration {}: {}", q.iteration, *problem));
  }
  if (!clamp) return;
  for (const auto& [v, label] : annotations.entries()) {
    const auto row = q.data.row(v);
    for (std::size_t l = 0; l < row.size(); ++l) {
      if (row[l] != (l == label ? 1.0 : 0.0)) {
        throw std::logic_error(
            fmt::format("clamped vertex {} is not one-hot on class {} at iteration {}", v, label, q.iteration));
      }
    }
  }
}

void mean_field_step(const Beliefs& q, const UnaryField& unary, const SampledNeighborhoods& nbrs,
                     const AnnotationSet& annotations, const EngineConfig& config, Beliefs& out) {
  check_shapes(q, unary, nbrs, annotations);
  const std::size_t n = unary.num_vertices();
  const std::size_t num_classes = unary.num_classes();
  const double alpha = config.weights.alpha;
  const double beta = config.weights.beta;
  const bool diversity = nbrs.base_term == PairwiseTerm::diversity;

  // Annotation messages are scattered into a dense buffer in ascending source
  // order so the per-target sums do not depend on scheduling.
  Matrix annotation_messages;
  if (beta != 0.0 && !nbrs.annotation_edges.empty()) {
    annotation_messages = Matrix(n, num_classes);
    for (const auto& group : nbrs.annotation_edges) {
      const auto label = annotations.find(group.source);
      if (!label) continue;
      for (const Edge& e : group.targets) {
        auto row = annotation_messages.row(e.vertex);
        for (std::size_t l = 0; l < num_classes; ++l) {
          if (l != *label) row[l] += beta * annotation_pair(e.similarity, false);
        }
      }
    }
  }

  if (out.data.rows() != n || out.data.cols() != num_classes) out.data = Matrix(n, num_classes);
  out.iteration = q.iteration + 1;
  const auto& k = kernels::active();
  const double keep = config.damping;

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      auto m = out.data.row(v);
      const auto vertex = static_cast<VertexId>(v);
      if (config.clamp_annotations) {
        if (auto label = annotations.find(vertex)) {
          set_one_hot(m, *label);
          continue;
        }
      }
      const auto phi = unary.data.row(v);
      std::copy(phi.begin(), phi.end(), m.begin());
      if (alpha != 0.0) {
        for (const Edge& e : nbrs.base(vertex)) {
          const double* qw = q.data.row(e.vertex).data();
          if (diversity) {
            // E_{Q_w}[(1 - sim) [l == y_w]] = (1 - sim) Q_w(l)
            k.axpy(alpha * diversity_pair(e.similarity, true), qw, m.data(), num_classes);
          } else {
            // E_{Q_w}[sim [l != y_w]] = sim (1 - Q_w(l))
            const double w = alpha * annotation_pair(e.similarity, false);
            for (double& x : m) x += w;
            k.axpy(-w, qw, m.data(), num_classes);
          }
        }
      }
      if (!annotation_messages.empty()) {
        const auto a = annotation_messages.row(v);
        k.axpy(1.0, a.data(), m.data(), num_classes);
      }
      for (double& x : m) x = -x;
      softmax_inplace(m);
      if (keep != 0.0) {
        const auto prev = q.data.row(v);
        for (std::size_t l = 0; l < num_classes; ++l) m[l] = (1.0 - keep) * m[l] + keep * prev[l];
      }
    }
  });

#ifdef CRFREFINE_INVARIANT_CHECKS
  check_belief_invariants(out, annotations, config.clamp_annotations);
#endif
}

Beliefs mean_field_step(const Beliefs& q, const UnaryField& unary, const SampledNeighborhoods& neighborhoods,
                        const AnnotationSet& annotations, const EngineConfig& config) {
  Beliefs out;
  mean_field_step(q, unary, neighborhoods, annotations, config, out);
  return out;
}

Engine::Engine(UnaryField unary, std::shared_ptr<const NeighborhoodIndex> index, EngineConfig config,
               AnnotationSet annotations)
    : unary_(std::move(unary)), index_(std::move(index)), config_(config), annotations_(std::move(annotations)) {
  config_.validate();
  if (!index_ || index_->num_vertices != unary_.num_vertices()) {
    throw Error(ErrorCode::invalid_argument, "neighborhood index does not match the unary field");
  }
  if (annotations_.num_vertices() == 0 && annotations_.empty()) {
    annotations_ = AnnotationSet(unary_.num_vertices(), unary_.num_classes());
  }
  if (annotations_.num_vertices() != unary_.num_vertices() || annotations_.num_classes() != unary_.num_classes()) {
    throw Error(ErrorCode::invalid_argument, "annotation set does not match the unary field");
  }
  q_ = initial_beliefs(unary_, annotations_, config_.clamp_annotations);
#ifdef CRFREFINE_INVARIANT_CHECKS
  check_belief_invariants(q_, annotations_, config_.clamp_annotations);
#endif
}

std::vector<ClassId> Engine::predictions() const { return argmax_rows(q_.data); }

AuditRecord Engine::apply_annotation(VertexId vertex, ClassId label) {
  const AnnotationRecord r = annotations_.set(vertex, label);
  if (config_.clamp_annotations) set_one_hot(q_.data.row(vertex), label);
  return AuditRecord{std::chrono::system_clock::now(), r.vertex, r.label, r.previous, q_.iteration};
}

StepStats Engine::step() {
  const auto start = std::chrono::steady_clock::now();
  const SampledNeighborhoods nbrs = resample(*index_, annotations_, q_.iteration);
  mean_field_step(q_, unary_, nbrs, annotations_, config_, scratch_);
  const auto& values_new = scratch_.data.values();
  const auto& values_old = q_.data.values();
  const double delta = kernels::active().max_abs_diff(values_new.data(), values_old.data(), values_new.size());
  std::swap(q_, scratch_);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  return StepStats{q_.iteration, delta, elapsed.count()};
}

RefinementResult refine(const UnaryField& unary, std::shared_ptr<const NeighborhoodIndex> index,
                        const AnnotationSet& annotations, const EngineConfig& config) {
  Engine engine(unary, std::move(index), config, annotations);
  RefinementResult result;
  for (std::size_t t = 0; t < config.max_iterations; ++t) {
    const StepStats s = engine.step();
    result.per_iteration_seconds.push_back(s.seconds);
    ++result.iterations_run;
    if (s.max_delta < config.convergence_tol) {
      result.converged = true;
      break;
    }
  }
  result.beliefs = engine.beliefs();
  result.predictions = engine.predictions();
  return result;
}

RefinementResult refine(const Dataset& dataset, std::shared_ptr<const NeighborhoodIndex> index,
                        const AnnotationSet& annotations, const EngineConfig& config) {
  config.validate();
  return refine(compute_unary(dataset.unary_embeddings, dataset.text, config.temperature), std::move(index),
                annotations, config);
}

}  // namespace crfrefine
