#include "crfrefine/baselines.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <map>

#include "crfrefine/kernels.hpp"
#include "crfrefine/parallel.hpp"

namespace crfrefine {

void LpConfig::validate() const {
  if (!(alpha_lp > 0.0 && alpha_lp < 1.0)) throw Error(ErrorCode::invalid_argument, "alpha_lp must lie in (0, 1)");
  if (k_graph < 1) throw Error(ErrorCode::invalid_argument, "k_graph must be >= 1");
  if (!(iter_tol > 0.0)) throw Error(ErrorCode::invalid_argument, "iter_tol must be positive");
  if (iter_max < 1) throw Error(ErrorCode::invalid_argument, "iter_max must be >= 1");
}

const char* to_string(LpSolver solver) noexcept {
  return solver == LpSolver::closed_form ? "closed_form" : "iterative";
}

LpSolver parse_lp_solver(std::string_view name) {
  if (name == "closed_form") return LpSolver::closed_form;
  if (name == "iterative") return LpSolver::iterative;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown LP solver '{}'", name));
}

NormalizedGraph build_lp_graph(const EmbeddingMatrix& embeddings, std::size_t k_graph) {
  const std::size_t n = embeddings.rows();
  const std::size_t k = std::min(k_graph, n - 1);
  const Matrix unit = embeddings.normalized_rows();
  const auto& kern = kernels::active();

  // Directed k-NN lists (most similar first, ties by id).
  std::vector<std::vector<std::pair<VertexId, double>>> knn(n);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<double> sims(n);
    std::vector<std::pair<double, VertexId>> cand;
    for (std::size_t v = begin; v < end; ++v) {
      kern.dot_rows(unit.row(v).data(), unit.values().data(), n, unit.cols(), sims.data());
      cand.clear();
      for (std::size_t w = 0; w < n; ++w) {
        if (w != v) cand.emplace_back(-std::clamp(sims[w], -1.0, 1.0), static_cast<VertexId>(w));
      }
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
      for (std::size_t i = 0; i < k; ++i) knn[v].emplace_back(cand[i].second, std::max(0.0, -cand[i].first));
    }
  });

  // Symmetrize by max; cosine is symmetric so both directions carry the same weight.
  std::vector<std::map<VertexId, double>> adj(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (const auto& [w, weight] : knn[v]) {
      if (weight <= 0.0) continue;
      auto& a = adj[v][w];
      a = std::max(a, weight);
      auto& b = adj[w][static_cast<VertexId>(v)];
      b = std::max(b, weight);
    }
  }
  std::vector<double> degree(n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    for (const auto& [w, weight] : adj[v]) degree[v] += weight;
  }

  NormalizedGraph g;
  g.num_vertices = n;
  g.offsets.reserve(n + 1);
  g.offsets.push_back(0);
  for (std::size_t v = 0; v < n; ++v) {
    for (const auto& [w, weight] : adj[v]) {
      g.columns.push_back(w);
      g.values.push_back(weight / std::sqrt(degree[v] * degree[w]));
    }
    g.offsets.push_back(g.columns.size());
  }
  return g;
}

namespace {

Matrix seed_matrix(const AnnotationSet& annotations, std::size_t n, std::size_t num_classes) {
  Matrix y(n, num_classes);
  for (const auto& [v, label] : annotations.entries()) {
    if (v >= n || label >= num_classes) {
      throw Error(ErrorCode::out_of_range, fmt::format("annotation ({}, {}) out of range", v, label));
    }
    y(v, label) = 1.0;
  }
  return y;
}

LpResult solve_closed_form(const NormalizedGraph& g, const Matrix& y, double alpha) {
  const auto n = static_cast<Eigen::Index>(g.num_vertices);
  const auto num_classes = static_cast<Eigen::Index>(y.cols());
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
  for (std::size_t v = 0; v < g.num_vertices; ++v) {
    for (std::size_t e = g.offsets[v]; e < g.offsets[v + 1]; ++e) {
      system(static_cast<Eigen::Index>(v), g.columns[e]) -= alpha * g.values[e];
    }
  }
  Eigen::MatrixXd rhs(n, num_classes);
  for (Eigen::Index v = 0; v < n; ++v) {
    for (Eigen::Index l = 0; l < num_classes; ++l) rhs(v, l) = y(v, l);
  }
  // I - aS is symmetric positive definite for a < 1.
  const Eigen::LLT<Eigen::MatrixXd> llt(system);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::invalid_argument, "label propagation system is not SPD");
  const Eigen::MatrixXd f = (1.0 - alpha) * llt.solve(rhs);

  LpResult r;
  r.scores = Matrix(g.num_vertices, y.cols());
  for (Eigen::Index v = 0; v < n; ++v) {
    for (Eigen::Index l = 0; l < num_classes; ++l) r.scores(v, l) = f(v, l);
  }
  return r;
}

LpResult solve_iterative(const NormalizedGraph& g, const Matrix& y, double alpha, double tol, std::size_t iter_max) {
  const std::size_t n = g.num_vertices;
  const std::size_t num_classes = y.cols();
  Matrix f = y;
  Matrix next(n, num_classes);
  const auto& k = kernels::active();
  LpResult r;
  r.converged = false;
  for (std::size_t it = 0; it < iter_max; ++it) {
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      for (std::size_t v = begin; v < end; ++v) {
        auto row = next.row(v);
        const auto seed = y.row(v);
        for (std::size_t l = 0; l < num_classes; ++l) row[l] = (1.0 - alpha) * seed[l];
        for (std::size_t e = g.offsets[v]; e < g.offsets[v + 1]; ++e) {
          k.axpy(alpha * g.values[e], f.row(g.columns[e]).data(), row.data(), num_classes);
        }
      }
    });
    const double delta = k.max_abs_diff(next.values().data(), f.values().data(), f.values().size());
    std::swap(f, next);
    r.iterations = it + 1;
    if (delta < tol) {
      r.converged = true;
      break;
    }
  }
  r.scores = std::move(f);
  return r;
}

}  // namespace

LpResult label_propagation(const NormalizedGraph& graph, const AnnotationSet& annotations, std::size_t num_classes,
                           const LpConfig& config) {
  config.validate();
  if (annotations.empty()) {
    throw Error(ErrorCode::missing_annotations, "label propagation requires annotations");
  }
  if (config.solver == LpSolver::closed_form && graph.num_vertices > config.closed_form_max_n) {
    throw Error(ErrorCode::too_large, fmt::format("instance too large for closed form: N = {} exceeds the guard of {}",
                                                  graph.num_vertices, config.closed_form_max_n));
  }
  const Matrix y = seed_matrix(annotations, graph.num_vertices, num_classes);
  LpResult r = config.solver == LpSolver::closed_form
                   ? solve_closed_form(graph, y, config.alpha_lp)
                   : solve_iterative(graph, y, config.alpha_lp, config.iter_tol, config.iter_max);
  r.predictions = argmax_rows(r.scores);
  return r;
}

LpResult label_propagation(const EmbeddingMatrix& pairwise_embeddings, const AnnotationSet& annotations,
                           std::size_t num_classes, const LpConfig& config) {
  config.validate();
  if (annotations.empty()) {
    throw Error(ErrorCode::missing_annotations, "label propagation requires annotations");
  }
  if (config.solver == LpSolver::closed_form && pairwise_embeddings.rows() > config.closed_form_max_n) {
    throw Error(ErrorCode::too_large, fmt::format("instance too large for closed form: N = {} exceeds the guard of {}",
                                                  pairwise_embeddings.rows(), config.closed_form_max_n));
  }
  if (pairwise_embeddings.rows() < 2) throw Error(ErrorCode::graph_too_small, "graph too small");
  return label_propagation(build_lp_graph(pairwise_embeddings, config.k_graph), annotations, num_classes, config);
}

}  // namespace crfrefine
