#pragma once

#include <span>

#include "crfrefine/core.hpp"

namespace crfrefine {

struct SampledNeighborhoods;

/// phi_v(l) = -log p_v(l), with p the temperature-scaled softmax of the
/// cosine similarities between patch v and each class text embedding.
struct UnaryField {
  Matrix data;  // N x L, entries >= 0
  double temperature = 0.01;

  [[nodiscard]] std::size_t num_vertices() const noexcept { return data.rows(); }
  [[nodiscard]] std::size_t num_classes() const noexcept { return data.cols(); }
};

inline constexpr double kProbabilityFloor = 1e-12;

struct PairwiseWeights {
  double alpha = 0.1;   // base (diversity or smoothing) term
  double beta = 0.01;   // annotation term

  void validate() const;
};

/// Which form the base pairwise term takes.
///  - diversity: edges to the most dissimilar patches, cost (1 - sim) when labels agree.
///  - smoothing: edges to the most similar patches, cost sim when labels differ
///    (the conventional smoothness prior; kept for ablations).
enum class PairwiseTerm { diversity, smoothing };

[[nodiscard]] const char* to_string(PairwiseTerm term) noexcept;
[[nodiscard]] PairwiseTerm parse_pairwise_term(std::string_view name);

[[nodiscard]] UnaryField compute_unary(const EmbeddingMatrix& unary_embeddings, const ClassTextEmbeddings& text,
                                       double temperature);

/// Zero-shot class probabilities exp(-phi).
[[nodiscard]] Matrix unary_probabilities(const UnaryField& unary);

/// (1 - sim) if the labels agree, else 0.
[[nodiscard]] constexpr double diversity_pair(double sim, bool same_label) noexcept {
  return same_label ? 1.0 - sim : 0.0;
}

/// sim if the labels differ, else 0.
[[nodiscard]] constexpr double annotation_pair(double sim, bool same_label) noexcept {
  return same_label ? 0.0 : sim;
}

/// Energy of a hard labeling: unary sum + alpha * base-term sum over sampled
/// base edges + beta * annotation-term sum over the edges leaving annotated
/// vertices. Diagnostic only; inference never evaluates it.
[[nodiscard]] double compute_energy(std::span<const ClassId> labeling, const UnaryField& unary,
                                    const SampledNeighborhoods& neighborhoods, const AnnotationSet& annotations,
                                    const PairwiseWeights& weights);

}  // namespace crfrefine
