#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crfrefine/core.hpp"
#include "crfrefine/potentials.hpp"

namespace crfrefine {

struct Edge {
  VertexId vertex = 0;
  double similarity = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct IndexConfig {
  std::size_t k_base = 16;      // |N_v|
  std::size_t k_ann = 5;        // |M_v|
  std::size_t pool_factor = 4;  // candidate pool = pool_factor * k
  std::uint64_t seed = 0;
  PairwiseTerm base_term = PairwiseTerm::diversity;

  void validate() const;
};

/// Ranked candidate pools per vertex, computed once from exact all-pairs
/// cosine similarities in the pairwise embedding space.
///
/// The base pool holds the pool_factor * k_base most dissimilar vertices
/// (ascending similarity) for the diversity term, or the most similar ones
/// (descending) for the smoothing term. The similar pool holds the
/// pool_factor * k_ann most similar vertices and feeds annotation edges.
/// Ties are broken by ascending vertex id; a vertex never appears in its own
/// pools.
struct NeighborhoodIndex {
  std::size_t num_vertices = 0;
  IndexConfig config;
  std::size_t base_pool_size = 0;
  std::size_t similar_pool_size = 0;
  std::vector<Edge> base_pool;     // num_vertices * base_pool_size
  std::vector<Edge> similar_pool;  // num_vertices * similar_pool_size

  [[nodiscard]] std::span<const Edge> base_candidates(VertexId v) const noexcept {
    return {base_pool.data() + std::size_t{v} * base_pool_size, base_pool_size};
  }
  [[nodiscard]] std::span<const Edge> similar_candidates(VertexId v) const noexcept {
    return {similar_pool.data() + std::size_t{v} * similar_pool_size, similar_pool_size};
  }

  /// Bytes held by the pools.
  [[nodiscard]] std::size_t memory_bytes() const noexcept;
};

/// Outgoing edges for one message-passing iteration.
struct SampledNeighborhoods {
  struct AnnotationEdges {
    VertexId source = 0;
    std::vector<Edge> targets;
  };

  std::size_t iteration = 0;
  PairwiseTerm base_term = PairwiseTerm::diversity;
  std::vector<std::size_t> base_offsets;  // CSR, size N + 1
  std::vector<Edge> base_edges;
  std::vector<AnnotationEdges> annotation_edges;  // ascending source

  [[nodiscard]] std::size_t num_vertices() const noexcept {
    return base_offsets.empty() ? 0 : base_offsets.size() - 1;
  }
  [[nodiscard]] std::span<const Edge> base(VertexId v) const noexcept {
    return {base_edges.data() + base_offsets[v], base_offsets[v + 1] - base_offsets[v]};
  }

  /// Fixed neighborhoods from explicit lists.
  static SampledNeighborhoods from_lists(const std::vector<std::vector<Edge>>& base,
                                         std::vector<AnnotationEdges> annotation = {},
                                         PairwiseTerm term = PairwiseTerm::diversity);

  [[nodiscard]] std::size_t memory_bytes() const noexcept;
};

/// Exact top-k pools; O(N^2 d) similarity evaluation, parallel over vertices.
/// Throws graph_too_small when fewer than two vertices are given.
[[nodiscard]] NeighborhoodIndex build_index(const EmbeddingMatrix& pairwise_embeddings, const IndexConfig& config);

/// Draws min(k_base, pool) base neighbors per vertex and min(k_ann, pool)
/// similar neighbors per annotated vertex, uniformly without replacement.
/// The random stream of each draw depends only on (seed, iteration, vertex),
/// so the result is independent of evaluation order and thread count.
/// Edges keep pool order.
[[nodiscard]] SampledNeighborhoods resample(const NeighborhoodIndex& index, const AnnotationSet& annotations,
                                            std::size_t iteration);

/// Debug dump of the pools, for fixtures.
[[nodiscard]] std::string index_to_json(const NeighborhoodIndex& index);

}  // namespace crfrefine
