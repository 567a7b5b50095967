#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "crfrefine/core.hpp"
#include "crfrefine/dataset.hpp"
#include "crfrefine/inference.hpp"
#include "crfrefine/neighborhood.hpp"
#include "crfrefine/potentials.hpp"

namespace testing {

using namespace crfrefine;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("crfrefine-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = dist(rng);
  return m;
}

inline EmbeddingMatrix random_embeddings(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> dist;
  Matrix m(rows, dim);
  for (double& x : m.values()) x = dist(rng);
  return EmbeddingMatrix(std::move(m));
}

/// Random row-stochastic matrix.
inline Matrix random_beliefs(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Matrix m = random_matrix(rows, cols, rng, 0.01, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (double x : m.row(r)) sum += x;
    for (double& x : m.row(r)) x /= sum;
  }
  return m;
}

/// Random unary field whose rows are valid negative log-distributions.
inline UnaryField random_unary(std::size_t n, std::size_t l, std::mt19937_64& rng) {
  Matrix p = random_beliefs(n, l, rng);
  for (double& x : p.values()) x = -std::log(x);
  return UnaryField{std::move(p), 1.0};
}

inline double cos_sim(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

/// Mean-field update evaluated literally: the pairwise message of each
/// neighbor is the sum over all of its labels y_w of Q_w(y_w) times the
/// pairwise cost phi(l, y_w), and the result is normalized by a plain
/// exp/sum. Shares no code with the engine beyond the input types.
inline Matrix oracle_step(const Matrix& q, const Matrix& unary, const SampledNeighborhoods& nbrs,
                          const AnnotationSet& annotations, double alpha, double beta, double damping, bool clamp) {
  const std::size_t n = q.rows();
  const std::size_t l = q.cols();
  Matrix m(n, l);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t y = 0; y < l; ++y) m(v, y) = unary(v, y);
  }
  for (std::size_t v = 0; v < n; ++v) {
    for (const Edge& e : nbrs.base(static_cast<VertexId>(v))) {
      for (std::size_t y = 0; y < l; ++y) {
        double expected = 0.0;
        for (std::size_t yw = 0; yw < l; ++yw) {
          const bool same = y == yw;
          const double cost = nbrs.base_term == PairwiseTerm::diversity ? (same ? 1.0 - e.similarity : 0.0)
                                                                        : (same ? 0.0 : e.similarity);
          expected += q(e.vertex, yw) * cost;
        }
        m(v, y) += alpha * expected;
      }
    }
  }
  for (const auto& group : nbrs.annotation_edges) {
    const auto label = annotations.find(group.source);
    if (!label) continue;
    for (const Edge& e : group.targets) {
      for (std::size_t y = 0; y < l; ++y) m(e.vertex, y) += beta * (y == *label ? 0.0 : e.similarity);
    }
  }
  Matrix out(n, l);
  for (std::size_t v = 0; v < n; ++v) {
    if (clamp) {
      if (const auto a = annotations.find(static_cast<VertexId>(v))) {
        for (std::size_t y = 0; y < l; ++y) out(v, y) = y == *a ? 1.0 : 0.0;
        continue;
      }
    }
    double z = 0.0;
    for (std::size_t y = 0; y < l; ++y) z += std::exp(-m(v, y));
    for (std::size_t y = 0; y < l; ++y) out(v, y) = (1.0 - damping) * std::exp(-m(v, y)) / z + damping * q(v, y);
  }
  return out;
}

inline double max_abs_difference(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) d = std::max(d, std::abs(a.values()[i] - b.values()[i]));
  return d;
}

/// A random fixed-neighborhood instance: N vertices, L classes, random
/// similarities in [-1, 1], random base lists and annotation groups.
struct TinyInstance {
  Matrix q;
  UnaryField unary;
  SampledNeighborhoods nbrs;
  AnnotationSet annotations;
};

inline TinyInstance random_tiny_instance(std::size_t n, std::size_t l, std::mt19937_64& rng,
                                         PairwiseTerm term = PairwiseTerm::diversity) {
  TinyInstance t;
  t.q = random_beliefs(n, l, rng);
  t.unary = random_unary(n, l, rng);
  t.annotations = AnnotationSet(n, l);
  std::uniform_real_distribution<double> sim(-1.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<ClassId> label(0, static_cast<ClassId>(l - 1));
  std::vector<std::vector<Edge>> base(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t w = 0; w < n; ++w) {
      if (w != v && coin(rng)) base[v].push_back(Edge{static_cast<VertexId>(w), sim(rng)});
    }
  }
  std::vector<SampledNeighborhoods::AnnotationEdges> groups;
  for (std::size_t v = 0; v < n; ++v) {
    if (!coin(rng)) continue;
    t.annotations.set(static_cast<VertexId>(v), label(rng));
    SampledNeighborhoods::AnnotationEdges g{static_cast<VertexId>(v), {}};
    for (std::size_t w = 0; w < n; ++w) {
      if (w != v && coin(rng)) g.targets.push_back(Edge{static_cast<VertexId>(w), sim(rng)});
    }
    groups.push_back(std::move(g));
  }
  t.nbrs = SampledNeighborhoods::from_lists(base, std::move(groups), term);
  return t;
}

/// Small labeled synthetic dataset with a clean unary space.
inline SyntheticSpec small_spec(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.patches_per_class = per_class;
  spec.dim_unary = 16;
  spec.dim_pairwise = 16;
  spec.unary_noise = noise;
  spec.seed = seed;
  return spec;
}

}  // namespace testing
