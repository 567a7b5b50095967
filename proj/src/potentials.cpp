#include "crfrefine/potentials.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "crfrefine/kernels.hpp"
#include "crfrefine/neighborhood.hpp"
#include "crfrefine/parallel.hpp"

namespace crfrefine {

void PairwiseWeights::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error(ErrorCode::invalid_argument, "alpha must be finite and >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error(ErrorCode::invalid_argument, "beta must be finite and >= 0");
}

const char* to_string(PairwiseTerm term) noexcept {
  return term == PairwiseTerm::diversity ? "diversity" : "smoothing";
}

PairwiseTerm parse_pairwise_term(std::string_view name) {
  if (name == "diversity") return PairwiseTerm::diversity;
  if (name == "smoothing") return PairwiseTerm::smoothing;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown pairwise term '{}'", name));
}

UnaryField compute_unary(const EmbeddingMatrix& unary_embeddings, const ClassTextEmbeddings& text,
                         double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::invalid_argument, "temperature must be positive");
  }
  if (unary_embeddings.dim() != text.dim()) {
    throw Error(ErrorCode::invalid_argument, fmt::format("unary embedding dimension {} differs from text dimension {}",
                                                         unary_embeddings.dim(), text.dim()));
  }
  const Matrix patches = unary_embeddings.normalized_rows();
  const Matrix classes = text.embeddings().normalized_rows();
  const std::size_t n = patches.rows();
  const std::size_t num_classes = classes.rows();
  const double floor_cost = -std::log(kProbabilityFloor);

  UnaryField field{Matrix(n, num_classes), temperature};
  const auto& k = kernels::active();
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      auto row = field.data.row(v);
      k.dot_rows(patches.row(v).data(), classes.values().data(), num_classes, patches.cols(), row.data());
      for (double& s : row) s = std::clamp(s, -1.0, 1.0) / temperature;
      softmax_inplace(row);
      for (double& p : row) p = p > kProbabilityFloor ? -std::log(p) : floor_cost;
    }
  });
  return field;
}

Matrix unary_probabilities(const UnaryField& unary) {
  Matrix p = unary.data;
  for (std::size_t v = 0; v < p.rows(); ++v) {
    auto row = p.row(v);
    for (double& x : row) x = -x;
    softmax_inplace(row);
  }
  return p;
}

double compute_energy(std::span<const ClassId> labeling, const UnaryField& unary,
                      const SampledNeighborhoods& neighborhoods, const AnnotationSet& annotations,
                      const PairwiseWeights& weights) {
  const std::size_t n = unary.num_vertices();
  if (labeling.size() != n || neighborhoods.num_vertices() != n) {
    throw Error(ErrorCode::invalid_argument, "labeling, unary field and neighborhoods disagree on vertex count");
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (labeling[v] >= unary.num_classes()) {
      throw Error(ErrorCode::out_of_range, fmt::format("label {} of vertex {} out of range", labeling[v], v));
    }
  }
  double unary_sum = 0.0;
  for (std::size_t v = 0; v < n; ++v) unary_sum += unary.data(v, labeling[v]);

  double base_sum = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    for (const Edge& e : neighborhoods.base(static_cast<VertexId>(v))) {
      const bool same = labeling[v] == labeling[e.vertex];
      base_sum += neighborhoods.base_term == PairwiseTerm::diversity ? diversity_pair(e.similarity, same)
                                                                     : annotation_pair(e.similarity, same);
    }
  }

  double annotation_sum = 0.0;
  for (const auto& group : neighborhoods.annotation_edges) {
    if (!annotations.contains(group.source)) continue;
    for (const Edge& e : group.targets) {
      annotation_sum += annotation_pair(e.similarity, labeling[group.source] == labeling[e.vertex]);
    }
  }
  return unary_sum + weights.alpha * base_sum + weights.beta * annotation_sum;
}

}  // namespace crfrefine
