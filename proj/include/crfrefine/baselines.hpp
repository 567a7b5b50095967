#pragma once

#include <vector>

#include "crfrefine/core.hpp"

namespace crfrefine {

enum class LpSolver { closed_form, iterative };

struct LpConfig {
  double alpha_lp = 0.5;
  std::size_t k_graph = 16;
  LpSolver solver = LpSolver::closed_form;
  double iter_tol = 1e-8;
  std::size_t iter_max = 1000;
  // The closed form allocates an N x N dense system; larger N is refused.
  std::size_t closed_form_max_n = 10000;

  void validate() const;
};

[[nodiscard]] const char* to_string(LpSolver solver) noexcept;
[[nodiscard]] LpSolver parse_lp_solver(std::string_view name);

/// Symmetric normalized affinity S = D^-1/2 W D^-1/2 in CSR form, where W is
/// the k-NN graph (weights max(0, cos)) symmetrized by elementwise max.
struct NormalizedGraph {
  std::size_t num_vertices = 0;
  std::vector<std::size_t> offsets;
  std::vector<VertexId> columns;
  std::vector<double> values;
};

[[nodiscard]] NormalizedGraph build_lp_graph(const EmbeddingMatrix& embeddings, std::size_t k_graph);

struct LpResult {
  Matrix scores;  // N x L
  std::vector<ClassId> predictions;
  std::size_t iterations = 0;  // 0 for the closed form
  bool converged = true;
};

/// Zhou et al. label spreading: F = (1 - a)(I - a S)^-1 Y, or the fixed-point
/// iteration F <- a S F + (1 - a) Y from F = Y.
[[nodiscard]] LpResult label_propagation(const NormalizedGraph& graph, const AnnotationSet& annotations,
                                         std::size_t num_classes, const LpConfig& config);

[[nodiscard]] LpResult label_propagation(const EmbeddingMatrix& pairwise_embeddings, const AnnotationSet& annotations,
                                         std::size_t num_classes, const LpConfig& config);

}  // namespace crfrefine
