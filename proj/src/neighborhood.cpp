#include "crfrefine/neighborhood.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <numeric>

#include "crfrefine/kernels.hpp"
#include "crfrefine/parallel.hpp"
#include "crfrefine/random.hpp"
#include "json.hpp"

namespace crfrefine {

namespace {

// Stream tags keep base and annotation draws independent.
constexpr std::uint64_t kBaseStream = 0x62617365;        // "base"
constexpr std::uint64_t kAnnotationStream = 0x616e6e6f;  // "anno"

constexpr std::size_t kQueryTile = 32;
constexpr std::size_t kCandidateBlock = 512;

bool ascending(const Edge& a, const Edge& b) {
  return a.similarity < b.similarity || (a.similarity == b.similarity && a.vertex < b.vertex);
}

bool descending(const Edge& a, const Edge& b) {
  return a.similarity > b.similarity || (a.similarity == b.similarity && a.vertex < b.vertex);
}

// Writes the `count` best candidates under `better` into `out`, ranked.
template <typename Better>
void select_top(std::vector<Edge>& scratch, std::size_t count, Better better, std::span<Edge> out) {
  if (count == 0) return;
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(count - 1), scratch.end(), better);
  std::sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(count), better);
  std::copy_n(scratch.begin(), count, out.begin());
}

// Samples min(k, pool.size()) pool entries without replacement, keeping pool order.
void sample_from_pool(std::span<const Edge> pool, std::size_t k, CounterRng rng, std::vector<std::size_t>& positions,
                      std::vector<Edge>& out) {
  const std::size_t take = std::min(k, pool.size());
  if (take == pool.size()) {
    out.insert(out.end(), pool.begin(), pool.end());
    return;
  }
  positions.resize(pool.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(positions[i], positions[j]);
  }
  std::sort(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(take));
  for (std::size_t i = 0; i < take; ++i) out.push_back(pool[positions[i]]);
}

}  // namespace

void IndexConfig::validate() const {
  if (k_base < 1) throw Error(ErrorCode::invalid_argument, "k_base must be >= 1");
  if (k_ann < 1) throw Error(ErrorCode::invalid_argument, "k_ann must be >= 1");
  if (pool_factor < 1) throw Error(ErrorCode::invalid_argument, "pool_factor must be >= 1");
}

std::size_t NeighborhoodIndex::memory_bytes() const noexcept {
  return (base_pool.capacity() + similar_pool.capacity()) * sizeof(Edge);
}

std::size_t SampledNeighborhoods::memory_bytes() const noexcept {
  std::size_t bytes = base_offsets.capacity() * sizeof(std::size_t) + base_edges.capacity() * sizeof(Edge);
  for (const auto& g : annotation_edges) bytes += sizeof(g) + g.targets.capacity() * sizeof(Edge);
  return bytes;
}

SampledNeighborhoods SampledNeighborhoods::from_lists(const std::vector<std::vector<Edge>>& base,
                                                      std::vector<AnnotationEdges> annotation, PairwiseTerm term) {
  SampledNeighborhoods s;
  s.base_term = term;
  s.base_offsets.reserve(base.size() + 1);
  s.base_offsets.push_back(0);
  for (const auto& edges : base) {
    s.base_edges.insert(s.base_edges.end(), edges.begin(), edges.end());
    s.base_offsets.push_back(s.base_edges.size());
  }
  std::sort(annotation.begin(), annotation.end(),
            [](const AnnotationEdges& a, const AnnotationEdges& b) { return a.source < b.source; });
  s.annotation_edges = std::move(annotation);
  return s;
}

NeighborhoodIndex build_index(const EmbeddingMatrix& pairwise_embeddings, const IndexConfig& config) {
  config.validate();
  const std::size_t n = pairwise_embeddings.rows();
  if (n < 2) throw Error(ErrorCode::graph_too_small, fmt::format("graph too small: {} vertices", n));
  if (n > std::numeric_limits<VertexId>::max()) throw Error(ErrorCode::too_large, "too many vertices");

  const Matrix unit = pairwise_embeddings.normalized_rows();
  const std::size_t dim = unit.cols();
  const bool diversity = config.base_term == PairwiseTerm::diversity;

  NeighborhoodIndex index;
  index.num_vertices = n;
  index.config = config;
  index.base_pool_size = std::min(config.pool_factor * config.k_base, n - 1);
  index.similar_pool_size = std::min(config.pool_factor * config.k_ann, n - 1);
  index.base_pool.resize(n * index.base_pool_size);
  index.similar_pool.resize(n * index.similar_pool_size);

  const auto& k = kernels::active();
  const std::size_t tiles = (n + kQueryTile - 1) / kQueryTile;
  parallel_for(
      tiles,
      [&](std::size_t tile_begin, std::size_t tile_end) {
        std::vector<double> sims(kQueryTile * n);
        std::vector<Edge> scratch;
        scratch.reserve(n);
        for (std::size_t tile = tile_begin; tile < tile_end; ++tile) {
          const std::size_t q0 = tile * kQueryTile;
          const std::size_t q1 = std::min(n, q0 + kQueryTile);
          // Candidate blocks stay cache-resident while every query of the tile visits them.
          for (std::size_t c0 = 0; c0 < n; c0 += kCandidateBlock) {
            const std::size_t count = std::min(kCandidateBlock, n - c0);
            for (std::size_t q = q0; q < q1; ++q) {
              k.dot_rows(unit.row(q).data(), unit.row(c0).data(), count, dim, sims.data() + (q - q0) * n + c0);
            }
          }
          for (std::size_t q = q0; q < q1; ++q) {
            const double* row = sims.data() + (q - q0) * n;
            scratch.clear();
            for (std::size_t w = 0; w < n; ++w) {
              if (w != q) scratch.push_back({static_cast<VertexId>(w), std::clamp(row[w], -1.0, 1.0)});
            }
            const auto base_out = std::span(index.base_pool).subspan(q * index.base_pool_size, index.base_pool_size);
            const auto sim_out =
                std::span(index.similar_pool).subspan(q * index.similar_pool_size, index.similar_pool_size);
            if (diversity) {
              select_top(scratch, index.base_pool_size, ascending, base_out);
              select_top(scratch, index.similar_pool_size, descending, sim_out);
            } else {
              // Both pools rank by descending similarity; the longer one contains the shorter.
              const std::size_t longest = std::max(index.base_pool_size, index.similar_pool_size);
              std::vector<Edge> ranked(longest);
              select_top(scratch, longest, descending, ranked);
              std::copy_n(ranked.begin(), index.base_pool_size, base_out.begin());
              std::copy_n(ranked.begin(), index.similar_pool_size, sim_out.begin());
            }
          }
        }
      },
      1);
  return index;
}

SampledNeighborhoods resample(const NeighborhoodIndex& index, const AnnotationSet& annotations,
                              std::size_t iteration) {
  const std::size_t n = index.num_vertices;
  const std::size_t per_vertex = std::min(index.config.k_base, index.base_pool_size);
  const std::uint64_t seed = index.config.seed;

  SampledNeighborhoods s;
  s.iteration = iteration;
  s.base_term = index.config.base_term;
  s.base_offsets.resize(n + 1);
  for (std::size_t v = 0; v <= n; ++v) s.base_offsets[v] = v * per_vertex;
  s.base_edges.resize(n * per_vertex);

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> positions;
    std::vector<Edge> picked;
    picked.reserve(per_vertex);
    for (std::size_t v = begin; v < end; ++v) {
      picked.clear();
      sample_from_pool(index.base_candidates(static_cast<VertexId>(v)), index.config.k_base,
                       CounterRng(seed, kBaseStream, iteration, v), positions, picked);
      std::copy(picked.begin(), picked.end(), s.base_edges.begin() + static_cast<std::ptrdiff_t>(v * per_vertex));
    }
  });

  std::vector<std::size_t> positions;
  s.annotation_edges.reserve(annotations.size());
  for (const auto& [vertex, label] : annotations.entries()) {
    if (vertex >= n) throw Error(ErrorCode::out_of_range, fmt::format("annotated vertex {} out of range", vertex));
    SampledNeighborhoods::AnnotationEdges group{vertex, {}};
    sample_from_pool(index.similar_candidates(vertex), index.config.k_ann,
                     CounterRng(seed, kAnnotationStream, iteration, vertex), positions, group.targets);
    s.annotation_edges.push_back(std::move(group));
  }
  return s;
}

std::string index_to_json(const NeighborhoodIndex& index) {
  using nlohmann::json;
  const auto dump_pool = [](std::span<const Edge> pool) {
    json arr = json::array();
    for (const Edge& e : pool) arr.push_back({{"vertex", e.vertex}, {"similarity", e.similarity}});
    return arr;
  };
  json doc{{"num_vertices", index.num_vertices},
           {"k_base", index.config.k_base},
           {"k_ann", index.config.k_ann},
           {"pool_factor", index.config.pool_factor},
           {"rng_seed", index.config.seed},
           {"base_term", to_string(index.config.base_term)}};
  json vertices = json::array();
  for (std::size_t v = 0; v < index.num_vertices; ++v) {
    vertices.push_back({{"base_pool", dump_pool(index.base_candidates(static_cast<VertexId>(v)))},
                        {"similar_pool", dump_pool(index.similar_candidates(static_cast<VertexId>(v)))}});
  }
  doc["vertices"] = std::move(vertices);
  return doc.dump();
}

}  // namespace crfrefine
