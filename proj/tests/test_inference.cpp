#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "crfrefine/inference.hpp"
#include "crfrefine/kernels.hpp"
#include "crfrefine/parallel.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace crfrefine;

namespace {

EngineConfig config_with(double alpha, double beta, double damping = 0.0, bool clamp = true) {
  EngineConfig c;
  c.weights = {alpha, beta};
  c.damping = damping;
  c.clamp_annotations = clamp;
  return c;
}

// Two patches with cosine similarity 0.5 and uniform unaries.
struct TwoVertex {
  UnaryField unary{Matrix(2, 2, std::log(2.0)), 1.0};
  EmbeddingMatrix embeddings{Matrix(2, 2, std::vector<double>{1.0, 0.0, 0.5, std::sqrt(0.75)})};
};

bool is_one_hot(std::span<const double> row, ClassId label) {
  for (std::size_t l = 0; l < row.size(); ++l) {
    if (row[l] != (l == label ? 1.0 : 0.0)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("mean-field step matches the explicit-summation oracle") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> size_n(1, 4);
  std::uniform_int_distribution<std::size_t> size_l(2, 3);
  std::uniform_real_distribution<double> weight(0.0, 2.0);
  std::uniform_real_distribution<double> damp(0.0, 0.9);
  for (int trial = 0; trial < 400; ++trial) {
    const auto term = trial % 2 == 0 ? PairwiseTerm::diversity : PairwiseTerm::smoothing;
    auto inst = testing::random_tiny_instance(size_n(rng), size_l(rng), rng, term);
    const double alpha = weight(rng);
    const double beta = weight(rng);
    const double damping = trial % 3 == 0 ? 0.0 : damp(rng);
    const bool clamp = trial % 4 != 1;
    const EngineConfig cfg = config_with(alpha, beta, damping, clamp);
    Beliefs q{inst.q, 0};
    if (clamp) {
      for (const auto& [v, label] : inst.annotations.entries()) {
        for (std::size_t l = 0; l < q.data.cols(); ++l) q.data(v, l) = l == label ? 1.0 : 0.0;
      }
    }
    const Beliefs out = mean_field_step(q, inst.unary, inst.nbrs, inst.annotations, cfg);
    const Matrix expected =
        testing::oracle_step(q.data, inst.unary.data, inst.nbrs, inst.annotations, alpha, beta, damping, clamp);
    CHECK(testing::max_abs_difference(out.data, expected) <= 1e-12);
    CHECK(out.iteration == 1);
  }
}

TEST_CASE("two-vertex diversity example") {
  const double log2 = std::log(2.0);
  const UnaryField unary{Matrix(2, 2, log2), 1.0};
  const auto nbrs = SampledNeighborhoods::from_lists({{Edge{1, 0.5}}, {Edge{0, 0.5}}});
  const Beliefs q{Matrix(2, 2, std::vector<double>{0.8, 0.2, 0.8, 0.2}), 0};
  const Beliefs out = mean_field_step(q, unary, nbrs, AnnotationSet(2, 2), config_with(1.0, 0.0));
  // m(0) = log 2 + 0.4, m(1) = log 2 + 0.1
  const double q0 = std::exp(-(log2 + 0.4)) / (std::exp(-(log2 + 0.4)) + std::exp(-(log2 + 0.1)));
  for (std::size_t v = 0; v < 2; ++v) {
    CHECK(std::abs(out.data(v, 0) - q0) < 1e-15);
    CHECK(std::abs(out.data(v, 1) - (1.0 - q0)) < 1e-15);
    CHECK(std::abs(out.data(v, 0) - 0.4256) < 5e-5);
    CHECK(std::abs(out.data(v, 1) - 0.5744) < 5e-5);
  }
}

TEST_CASE("zero pairwise weights reproduce the zero-shot distribution") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = testing::random_tiny_instance(4, 3, rng);
    const Beliefs q{inst.q, 0};
    const Beliefs out = mean_field_step(q, inst.unary, inst.nbrs, AnnotationSet(4, 3), config_with(0.0, 0.0));
    const Beliefs zero_shot = initial_beliefs(inst.unary, AnnotationSet(4, 3), true);
    CHECK(testing::max_abs_difference(out.data, zero_shot.data) <= 1e-15);
  }
}

TEST_CASE("clamped vertices are exactly one-hot") {
  std::mt19937_64 rng(13);
  auto inst = testing::random_tiny_instance(4, 3, rng);
  inst.annotations.set(2, 1);
  const Beliefs out = mean_field_step(Beliefs{inst.q, 0}, inst.unary, inst.nbrs, inst.annotations,
                                      config_with(5.0, 5.0, 0.5));
  for (const auto& [v, label] : inst.annotations.entries()) CHECK(is_one_hot(out.data.row(v), label));
}

TEST_CASE("empty annotation set makes beta irrelevant") {
  std::mt19937_64 rng(14);
  auto inst = testing::random_tiny_instance(4, 3, rng);
  const AnnotationSet none(4, 3);
  const Beliefs q{inst.q, 0};
  CHECK(mean_field_step(q, inst.unary, inst.nbrs, none, config_with(0.3, 0.0)).data ==
        mean_field_step(q, inst.unary, inst.nbrs, none, config_with(0.3, 7.0)).data);
}

TEST_CASE("belief invariant checker") {
  AnnotationSet ann(2, 2);
  ann.set(0, 1);
  Beliefs ok{Matrix(2, 2, std::vector<double>{0.0, 1.0, 0.3, 0.7}), 1};
  CHECK_NOTHROW(check_belief_invariants(ok, ann, true));
  Beliefs not_clamped{Matrix(2, 2, std::vector<double>{0.5, 0.5, 0.3, 0.7}), 1};
  CHECK_THROWS_AS(check_belief_invariants(not_clamped, ann, true), std::logic_error);
  CHECK_NOTHROW(check_belief_invariants(not_clamped, ann, false));
  Beliefs bad_sum{Matrix(2, 2, std::vector<double>{0.0, 1.0, 0.3, 0.8}), 1};
  CHECK_THROWS_AS(check_belief_invariants(bad_sum, ann, true), std::logic_error);
}

TEST_CASE("permutation equivariance of one step") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4;
    const std::size_t l = 3;
    auto inst = testing::random_tiny_instance(n, l, rng, trial % 2 ? PairwiseTerm::smoothing : PairwiseTerm::diversity);
    std::vector<VertexId> perm(n);
    std::iota(perm.begin(), perm.end(), VertexId{0});
    std::shuffle(perm.begin(), perm.end(), rng);  // old id -> new id

    Matrix q(n, l);
    Matrix u(n, l);
    AnnotationSet ann(n, l);
    std::vector<std::vector<Edge>> base(n);
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t c = 0; c < l; ++c) {
        q(perm[v], c) = inst.q(v, c);
        u(perm[v], c) = inst.unary.data(v, c);
      }
      for (const Edge& e : inst.nbrs.base(static_cast<VertexId>(v))) base[perm[v]].push_back({perm[e.vertex], e.similarity});
    }
    for (const auto& [v, label] : inst.annotations.entries()) ann.set(perm[v], label);
    std::vector<SampledNeighborhoods::AnnotationEdges> groups;
    for (const auto& g : inst.nbrs.annotation_edges) {
      SampledNeighborhoods::AnnotationEdges pg{perm[g.source], {}};
      for (const Edge& e : g.targets) pg.targets.push_back({perm[e.vertex], e.similarity});
      groups.push_back(std::move(pg));
    }
    std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.source < b.source; });
    const auto pnbrs = SampledNeighborhoods::from_lists(base, std::move(groups), inst.nbrs.base_term);

    const EngineConfig cfg = config_with(0.7, 0.9, 0.2);
    Beliefs q0{inst.q, 0};
    for (const auto& [v, label] : inst.annotations.entries()) {
      for (std::size_t c = 0; c < l; ++c) q0.data(v, c) = c == label ? 1.0 : 0.0;
    }
    Beliefs q1{Matrix(n, l), 0};
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t c = 0; c < l; ++c) q1.data(perm[v], c) = q0.data(v, c);
    }
    const Beliefs a = mean_field_step(q0, inst.unary, inst.nbrs, inst.annotations, cfg);
    const Beliefs b = mean_field_step(q1, UnaryField{u, 1.0}, pnbrs, ann, cfg);
    double diff = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t c = 0; c < l; ++c) diff = std::max(diff, std::abs(a.data(v, c) - b.data(perm[v], c)));
    }
    CHECK(diff <= 1e-12);
  }
}

TEST_CASE("permutation equivariance of a refinement run in fixed-neighborhood mode") {
  std::mt19937_64 rng(16);
  const std::size_t n = 60;
  const auto emb = testing::random_embeddings(n, 5, rng);
  const auto unary = testing::random_unary(n, 3, rng);
  std::vector<VertexId> perm(n);
  std::iota(perm.begin(), perm.end(), VertexId{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix pe(n, 5);
  Matrix pu(n, 3);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t c = 0; c < 5; ++c) pe(perm[v], c) = emb.matrix()(v, c);
    for (std::size_t c = 0; c < 3; ++c) pu(perm[v], c) = unary.data(v, c);
  }
  IndexConfig cfg;
  cfg.pool_factor = 1;
  cfg.k_base = 6;
  AnnotationSet ann(n, 3);
  AnnotationSet pann(n, 3);
  ann.set(4, 2);
  pann.set(perm[4], 2);
  EngineConfig engine;
  engine.max_iterations = 5;
  engine.weights = {0.5, 0.5};
  const auto a = refine(unary, std::make_shared<const NeighborhoodIndex>(build_index(emb, cfg)), ann, engine);
  cfg.seed = 1234;  // fixed-neighborhood mode is seed independent
  const auto b = refine(UnaryField{pu, 1.0},
                        std::make_shared<const NeighborhoodIndex>(build_index(EmbeddingMatrix(pe), cfg)), pann, engine);
  double diff = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t c = 0; c < 3; ++c) diff = std::max(diff, std::abs(a.beliefs.data(v, c) - b.beliefs.data(perm[v], c)));
  }
  CHECK(diff <= 1e-12);
}

TEST_CASE("increasing beta weakly raises the annotated class on similar neighbors") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> pos_sim(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto inst = testing::random_tiny_instance(4, 3, rng);
    AnnotationSet ann(4, 3);
    const ClassId label = static_cast<ClassId>(trial % 3);
    ann.set(0, label);
    std::vector<std::vector<Edge>> base(4);
    for (VertexId v = 0; v < 4; ++v) base[v].assign(inst.nbrs.base(v).begin(), inst.nbrs.base(v).end());
    SampledNeighborhoods::AnnotationEdges group{0, {}};
    for (VertexId w = 1; w < 4; ++w) group.targets.push_back({w, pos_sim(rng)});
    const auto nbrs = SampledNeighborhoods::from_lists(base, {group});
    Beliefs q{inst.q, 0};
    for (std::size_t c = 0; c < 3; ++c) q.data(0, c) = c == label ? 1.0 : 0.0;
    double previous_beta = 0.0;
    Beliefs prev = mean_field_step(q, inst.unary, nbrs, ann, config_with(0.4, 0.0));
    for (double beta : {0.01, 0.1, 1.0, 10.0}) {
      const Beliefs next = mean_field_step(q, inst.unary, nbrs, ann, config_with(0.4, beta));
      for (const Edge& e : group.targets) {
        CAPTURE(previous_beta);
        CHECK(next.data(e.vertex, label) >= prev.data(e.vertex, label));
      }
      prev = next;
      previous_beta = beta;
    }
  }
}

TEST_CASE("engine annotation contract") {
  std::mt19937_64 rng(18);
  const std::size_t n = 40;
  const auto emb = testing::random_embeddings(n, 6, rng);
  const auto unary = testing::random_unary(n, 3, rng);
  auto index = std::make_shared<const NeighborhoodIndex>(build_index(emb, IndexConfig{}));
  Engine engine(unary, index, EngineConfig{});
  const auto first = engine.apply_annotation(3, 2);
  CHECK_FALSE(first.previous.has_value());
  CHECK(engine.predictions()[3] == 2);
  CHECK(is_one_hot(engine.beliefs().data.row(3), 2));
  engine.step();
  CHECK(engine.predictions()[3] == 2);
  const auto second = engine.apply_annotation(3, 0);
  REQUIRE(second.previous.has_value());
  CHECK(*second.previous == 2);
  CHECK(second.iteration == 1);
  CHECK(engine.predictions()[3] == 0);
  CHECK(engine.annotations().size() == 1);
  CHECK_THROWS_AS(engine.apply_annotation(static_cast<VertexId>(n), 0), Error);
  CHECK_THROWS_AS(engine.apply_annotation(0, 3), Error);
}

TEST_CASE("annotation raises class belief on its sampled similar neighbors") {
  std::mt19937_64 rng(19);
  const std::size_t n = 50;
  const auto emb = testing::random_embeddings(n, 6, rng);
  const auto unary = testing::random_unary(n, 3, rng);
  auto index = std::make_shared<const NeighborhoodIndex>(build_index(emb, IndexConfig{}));
  EngineConfig with_beta;
  EngineConfig without_beta;
  without_beta.weights.beta = 0.0;
  Engine a(unary, index, with_beta);
  Engine b(unary, index, without_beta);
  a.apply_annotation(3, 2);
  b.apply_annotation(3, 2);
  a.step();
  b.step();
  AnnotationSet ann(n, 3);
  ann.set(3, 2);
  const auto sample = resample(*index, ann, 0);
  REQUIRE(sample.annotation_edges.size() == 1);
  bool strictly = false;
  for (const Edge& e : sample.annotation_edges[0].targets) {
    CHECK(a.beliefs().data(e.vertex, 2) >= b.beliefs().data(e.vertex, 2));
    strictly = strictly || (e.similarity > 0 && a.beliefs().data(e.vertex, 2) > b.beliefs().data(e.vertex, 2));
  }
  CHECK(strictly);
}

TEST_CASE("refine reductions") {
  std::mt19937_64 rng(20);
  const std::size_t n = 80;
  const auto emb = testing::random_embeddings(n, 6, rng);
  const auto unary = testing::random_unary(n, 4, rng);
  auto index = std::make_shared<const NeighborhoodIndex>(build_index(emb, IndexConfig{}));
  const auto zero_shot = argmax_rows(initial_beliefs(unary, AnnotationSet(n, 4), true).data);

  EngineConfig one = config_with(0.0, 0.0);
  one.max_iterations = 1;
  CHECK(refine(unary, index, AnnotationSet(n, 4), one).predictions == zero_shot);

  EngineConfig none;
  none.max_iterations = 0;
  const auto r0 = refine(unary, index, AnnotationSet(n, 4), none);
  CHECK(r0.iterations_run == 0);
  CHECK(r0.predictions == zero_shot);

  EngineConfig full;
  const auto r = refine(unary, index, AnnotationSet(n, 4), full);
  CHECK(r.iterations_run >= 1);
  CHECK(r.iterations_run <= 10);
  CHECK(r.per_iteration_seconds.size() == r.iterations_run);
  CHECK(r.predictions == argmax_rows(r.beliefs.data));
  CHECK(r.beliefs.iteration == r.iterations_run);
}

TEST_CASE("damped fixed-neighborhood two-vertex run converges") {
  TwoVertex tv;
  IndexConfig cfg;
  cfg.pool_factor = 1;
  auto index = std::make_shared<const NeighborhoodIndex>(build_index(tv.embeddings, cfg));
  REQUIRE(index->base_candidates(0).size() == 1);
  CHECK(std::abs(index->base_candidates(0)[0].similarity - 0.5) < 1e-15);
  EngineConfig engine = config_with(1.0, 0.0, 0.5);
  engine.convergence_tol = 1e-4;
  const auto r = refine(tv.unary, index, AnnotationSet(2, 2), engine);
  CHECK(r.converged);
  CHECK(r.iterations_run <= engine.max_iterations);
}

TEST_CASE("rows stay stochastic across many iterations") {
  std::mt19937_64 rng(21);
  const std::size_t n = 120;
  const auto emb = testing::random_embeddings(n, 6, rng);
  const auto unary = testing::random_unary(n, 5, rng);
  auto index = std::make_shared<const NeighborhoodIndex>(build_index(emb, IndexConfig{}));
  for (bool clamp : {true, false}) {
    for (auto alpha : {0.1, 5.0}) {
      EngineConfig cfg = config_with(alpha, 1.0, 0.3, clamp);
      Engine engine(unary, index, cfg);
      engine.apply_annotation(1, 4);
      engine.apply_annotation(77, 0);
      for (int t = 0; t < 25; ++t) {
        engine.step();
        CHECK_FALSE(check_row_stochastic(engine.beliefs().data, 1e-9).has_value());
        if (clamp) {
          CHECK(is_one_hot(engine.beliefs().data.row(1), 4));
          CHECK(is_one_hot(engine.beliefs().data.row(77), 0));
        }
      }
    }
  }
}

TEST_CASE("results do not depend on worker count") {
  std::mt19937_64 rng(22);
  const std::size_t n = 1500;
  const auto emb = testing::random_embeddings(n, 8, rng);
  const auto unary = testing::random_unary(n, 4, rng);
  auto index = std::make_shared<const NeighborhoodIndex>(build_index(emb, IndexConfig{}));
  AnnotationSet ann(n, 4);
  ann.set(10, 1);
  ann.set(900, 3);
  set_worker_count(1);
  const auto a = refine(unary, index, ann, EngineConfig{});
  set_worker_count(5);
  const auto b = refine(unary, index, ann, EngineConfig{});
  set_worker_count(0);
  CHECK(a.beliefs.data == b.beliefs.data);
}

TEST_CASE("kernel levels agree on a refinement run") {
  std::mt19937_64 rng(23);
  const std::size_t n = 300;
  const auto emb = testing::random_embeddings(n, 8, rng);
  const auto unary = testing::random_unary(n, 4, rng);
  auto index = std::make_shared<const NeighborhoodIndex>(build_index(emb, IndexConfig{}));
  const auto level = kernels::active().level;
  REQUIRE(kernels::select(kernels::Level::scalar));
  const auto a = refine(unary, index, AnnotationSet(n, 4), EngineConfig{});
  REQUIRE(kernels::select(level));
  const auto b = refine(unary, index, AnnotationSet(n, 4), EngineConfig{});
  CHECK(testing::max_abs_difference(a.beliefs.data, b.beliefs.data) <= 1e-12);
}

TEST_CASE("engine config validation") {
  EngineConfig c;
  CHECK_NOTHROW(c.validate());
  c.damping = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = EngineConfig{};
  c.convergence_tol = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = EngineConfig{};
  c.temperature = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = EngineConfig{};
  c.weights.beta = -0.5;
  CHECK_THROWS_AS(c.validate(), Error);
}
