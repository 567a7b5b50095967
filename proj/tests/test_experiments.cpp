#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "crfrefine/config_json.hpp"
#include "crfrefine/experiments.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace crfrefine;

namespace {

std::shared_ptr<const NeighborhoodIndex> index_for(const Dataset& d, IndexConfig cfg = {}) {
  return std::make_shared<const NeighborhoodIndex>(build_index(d.pairwise_embeddings, cfg));
}

// Noisy enough that the zero-shot classifier makes plenty of mistakes.
const SyntheticDataset& noisy_set() {
  static const SyntheticDataset s = generate_synthetic(testing::small_spec(4, 100, 0.5, 3));
  return s;
}

}  // namespace

TEST_CASE("sample_random examples") {
  std::vector<ClassId> labels(30);
  for (std::size_t v = 0; v < labels.size(); ++v) labels[v] = static_cast<ClassId>(v % 3);
  const auto all = sample_random(labels, 3, 30, 1);
  CHECK(all.size() == 30);
  for (const auto& [v, label] : all.entries()) CHECK(label == labels[v]);
  CHECK(sample_random(labels, 3, 0, 1).empty());
  const auto a = sample_random(labels, 3, 7, 42);
  const auto b = sample_random(labels, 3, 7, 42);
  CHECK(a.entries() == b.entries());
  CHECK(a.size() == 7);
  CHECK(a.entries() != sample_random(labels, 3, 7, 43).entries());
  CHECK_THROWS_AS((void)sample_random(labels, 3, 31, 1), Error);
}

TEST_CASE("sample_random is roughly uniform over vertices") {
  std::vector<ClassId> labels(20, 0);
  std::vector<int> hits(20, 0);
  const int draws = 4000;
  for (int s = 0; s < draws; ++s) {
    const auto picked = sample_random(labels, 1, 5, static_cast<std::uint64_t>(s));
    for (const auto& [v, label] : picked.entries()) ++hits[v];
  }
  // Each vertex is picked with probability 1/4; expected 1000 hits, sd about 27.
  for (int h : hits) CHECK(std::abs(h - draws / 4) < 150);
}

TEST_CASE("sample_error_based examples") {
  const std::vector<ClassId> labels{0, 1, 2, 0, 1, 2};
  const auto none = sample_error_based(labels, labels, 3, 4, 1);
  CHECK(none.annotations.empty());
  CHECK(none.shortfall == 4);

  const std::vector<ClassId> preds{0, 0, 2, 1, 1, 0};  // wrong at 1, 3, 5
  const auto exact = sample_error_based(preds, labels, 3, 3, 9);
  CHECK(exact.shortfall == 0);
  CHECK(exact.annotations.entries() == std::map<VertexId, ClassId>{{1, 1}, {3, 0}, {5, 2}});

  const auto more = sample_error_based(preds, labels, 3, 5, 9);
  CHECK(more.annotations.size() == 3);
  CHECK(more.shortfall == 2);

  AnnotationSet exclude(6, 3);
  exclude.set(3, 0);
  const auto excluded = sample_error_based(preds, labels, 3, 3, 9, &exclude);
  CHECK(excluded.annotations.size() == 2);
  CHECK_FALSE(excluded.annotations.contains(3));
}

TEST_CASE("error-based sampling only returns misclassified vertices") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<ClassId> cls(0, 4);
  std::vector<ClassId> labels(1000);
  std::vector<ClassId> preds(1000);
  for (std::size_t v = 0; v < 1000; ++v) labels[v] = preds[v] = cls(rng);
  for (std::size_t v = 0; v < 100; ++v) preds[v * 10] = static_cast<ClassId>((labels[v * 10] + 1) % 5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = sample_error_based(preds, labels, 5, 5, seed);
    CHECK(s.annotations.size() == 5);
    for (const auto& [v, label] : s.annotations.entries()) {
      CHECK(preds[v] != labels[v]);
      CHECK(label == labels[v]);
    }
  }
}

TEST_CASE("accuracy metrics") {
  const std::vector<ClassId> labels{0, 1, 1, 0};
  const std::vector<ClassId> preds{0, 1, 0, 1};
  CHECK(accuracy(preds, labels) == 0.5);
  AnnotationSet ann(4, 2);
  ann.set(0, 0);
  CHECK(accuracy_excluding(preds, labels, ann) == doctest::Approx(1.0 / 3.0));
  for (VertexId v = 0; v < 4; ++v) ann.set(v, labels[v]);
  CHECK(accuracy_excluding(preds, labels, ann) == 0.0);
}

TEST_CASE("refinement reports: accuracy counts annotated vertices as correct") {
  const Dataset& d = noisy_set().dataset;
  auto index = index_for(d);
  for (auto kind : {StrategyKind::random, StrategyKind::error_based}) {
    SamplingStrategy s;
    s.kind = kind;
    s.budget = 40;
    s.seed = 5;
    const auto r = run_refinement(d, index, EngineConfig{}, s);
    CHECK(r.annotations_placed == 40);
    CHECK(r.accuracy >= r.accuracy_excl_annotated);
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
    CHECK(r.predictions.size() == d.num_patches());
  }
}

TEST_CASE("reports are reproducible") {
  const Dataset& d = noisy_set().dataset;
  SamplingStrategy s;
  s.kind = StrategyKind::error_based;
  s.budget = 20;
  const auto a = run_refinement(d, index_for(d), EngineConfig{}, s);
  const auto b = run_refinement(d, index_for(d), EngineConfig{}, s);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.predictions == b.predictions);
  CHECK(a.config_snapshot() == b.config_snapshot());
  const auto h1 = run_hitl(d, index_for(d), EngineConfig{}, 5, 30, 2);
  const auto h2 = run_hitl(d, index_for(d), EngineConfig{}, 5, 30, 2);
  CHECK(h1.predictions == h2.predictions);
  CHECK(h1.accuracy_curve == h2.accuracy_curve);
}

TEST_CASE("hitl with zero budget equals the no-annotation run") {
  const Dataset& d = noisy_set().dataset;
  auto index = index_for(d);
  const auto hitl = run_hitl(d, index, EngineConfig{}, 5, 0, 0);
  const auto plain = run_refinement(d, index, EngineConfig{}, SamplingStrategy{});
  CHECK(hitl.predictions == plain.predictions);
  CHECK(hitl.accuracy == plain.accuracy);
  CHECK(hitl.iterations == plain.iterations);
  CHECK(hitl.annotations_placed == 0);
  CHECK(hitl.annotation_rounds == 0);
}

TEST_CASE("hitl places the budget in rounds of per_round") {
  const Dataset& d = noisy_set().dataset;
  const double zero_shot = run_zero_shot(d, EngineConfig{}).accuracy;
  REQUIRE(zero_shot < 0.7);  // far more than 100 misclassified vertices
  const auto r = run_hitl(d, index_for(d), EngineConfig{}, 5, 100, 7);
  CHECK(r.annotation_rounds == 20);
  CHECK(r.annotations_placed == 100);
  CHECK(r.shortfall == 0);
  CHECK(r.accuracy_curve.size() == 20);
  CHECK(r.iterations >= 19);
  CHECK(r.iterations <= 19 + EngineConfig{}.max_iterations);
  CHECK(r.strategy == "hitl");

  const auto uneven = run_hitl(d, index_for(d), EngineConfig{}, 7, 30, 7);
  CHECK(uneven.annotation_rounds == 5);  // 7 + 7 + 7 + 7 + 2
  CHECK(uneven.annotations_placed == 30);
}

TEST_CASE("hitl on a perfect zero-shot set places nothing and reports the shortfall") {
  auto spec = testing::small_spec(3, 50, 0.0, 4);
  spec.unary_jitter = 1.0;
  const Dataset d = generate_synthetic(spec).dataset;
  REQUIRE(run_zero_shot(d, EngineConfig{}).accuracy == 1.0);
  const auto r = run_hitl(d, index_for(d), EngineConfig{}, 5, 100, 0);
  CHECK(r.annotations_placed == 0);
  CHECK(r.shortfall == 100);
  CHECK(r.annotation_rounds == 1);
}

TEST_CASE("hitl never places more than were ever misclassified") {
  auto spec = testing::small_spec(3, 60, 0.05, 8);
  spec.unary_jitter = 1.0;
  const Dataset d = generate_synthetic(spec).dataset;
  const auto r = run_hitl(d, index_for(d), EngineConfig{}, 5, 100, 0);
  CHECK(r.annotations_placed + r.shortfall == 100);
  CHECK(r.annotations_placed <= r.annotation_rounds * 5);
  CHECK(r.annotations_placed < 100);
}

TEST_CASE("lp runner") {
  const Dataset& d = noisy_set().dataset;
  SamplingStrategy s;
  s.kind = StrategyKind::random;
  s.budget = 25;
  const auto r = run_lp(d, LpConfig{}, s);
  CHECK(r.method == Method::lp);
  CHECK(r.annotations_placed == 25);
  CHECK(r.accuracy >= r.accuracy_excl_annotated - 1e-12);
  CHECK_THROWS_AS((void)run_lp(d, LpConfig{}, SamplingStrategy{}), Error);
}

TEST_CASE("unlabeled datasets refine but score as NaN") {
  Dataset d = noisy_set().dataset;
  d.labels.reset();
  const auto r = run_refinement(d, index_for(d), EngineConfig{}, SamplingStrategy{});
  CHECK(std::isnan(r.accuracy));
  SamplingStrategy s;
  s.kind = StrategyKind::random;
  s.budget = 3;
  try {
    (void)run_refinement(d, index_for(d), EngineConfig{}, s);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::missing_labels);
  }
}

TEST_CASE("ablation single cell equals a direct run") {
  const Dataset& d = noisy_set().dataset;
  AblationGrid grid;
  grid.strategy.kind = StrategyKind::error_based;
  grid.strategy.budget = 10;
  const auto rows = run_ablation_grid(d, grid);
  REQUIRE(rows.size() == 1);
  EngineConfig ec;
  ec.weights.alpha = 0.1;
  SamplingStrategy s = grid.strategy;
  s.seed = 0;
  const auto direct = run_refinement(d, index_for(d), ec, s);
  CHECK(rows[0].report.predictions == direct.predictions);
  CHECK(rows[0].report.accuracy == direct.accuracy);
}

TEST_CASE("ablation grid covers every cell and memory grows with k") {
  const Dataset& d = noisy_set().dataset;
  const auto grid = parse_ablation_grid(nlohmann::json::parse(
      R"({"pairwise_term": ["diversity", "smoothing"], "k_base": [4, 16, 64], "beta_on": [true, false],
          "alpha": [0.1], "seeds": [0]})"));
  CHECK(grid.cells().size() == 12);
  const auto rows = run_ablation_grid(d, grid);
  REQUIRE(rows.size() == 12);
  for (auto term : {PairwiseTerm::diversity, PairwiseTerm::smoothing}) {
    std::vector<std::size_t> bytes;
    for (const auto& row : rows) {
      if (row.cell.term == term && row.cell.beta_on) bytes.push_back(row.neighborhood_bytes);
    }
    REQUIRE(bytes.size() == 3);
    CHECK(bytes[0] < bytes[1]);
    CHECK(bytes[1] < bytes[2]);
  }
  for (const auto& row : rows) {
    CHECK(row.report.index.base_term == row.cell.term);
    if (!row.cell.beta_on) CHECK(row.report.engine.weights.beta == 0.0);
  }
  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  std::istringstream lines(csv.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == reports_csv_header() + ",pairwise_term,neighborhood_bytes");
  std::size_t count = 0;
  for (std::string line; std::getline(lines, line);) ++count;
  CHECK(count == 12);
}

TEST_CASE("ablation grid parsing errors") {
  CHECK_THROWS_AS((void)parse_ablation_grid(nlohmann::json::parse(R"({"k_base": []})")), Error);
  CHECK_THROWS_AS((void)parse_ablation_grid(nlohmann::json::parse(R"({"pairwise_term": ["flat"]})")), Error);
  CHECK_THROWS_AS((void)parse_ablation_grid(nlohmann::json::parse(R"({"alpha": "x"})")), Error);
}

TEST_CASE("report csv format") {
  CHECK(reports_csv_header() ==
        "dataset,method,strategy,budget,seed,accuracy,accuracy_excl_annotated,iterations,mean_iter_seconds,alpha,beta,"
        "k_base,k_ann,pool_factor,temperature");
  ExperimentReport r;
  r.dataset = "toy";
  r.accuracy = 0.75;
  r.accuracy_excl_annotated = 0.5;
  r.iterations = 3;
  r.iteration_seconds = {1.0, 2.0, 3.0};
  CHECK(report_csv_line(r) == "toy,histocrf,none,0,0,0.75,0.5,3,2,0.1,0.01,16,5,4,0.01");
  const std::vector<ExperimentReport> reports{r, r};
  const auto mean = mean_over_seeds(reports);
  CHECK(mean.is_seed_mean);
  CHECK(report_csv_line(mean).starts_with("toy,histocrf,none,0,mean,0.75,"));
}

TEST_CASE("config snapshot reruns the cell") {
  const Dataset& d = noisy_set().dataset;
  IndexConfig ic;
  ic.seed = 9;
  ic.k_base = 8;
  EngineConfig ec;
  ec.weights = {0.3, 0.2};
  SamplingStrategy s;
  s.kind = StrategyKind::random;
  s.budget = 12;
  s.seed = 4;
  const auto r = run_refinement(d, index_for(d, ic), ec, s);
  const auto snap = r.config_snapshot();
  const auto ec2 = snap.at("engine").get<EngineConfig>();
  const auto ic2 = snap.at("index").get<IndexConfig>();
  SamplingStrategy s2;
  s2.kind = parse_strategy(snap.at("strategy").get<std::string>());
  s2.budget = snap.at("budget").get<std::size_t>();
  s2.seed = snap.at("strategy_seed").get<std::uint64_t>();
  const auto again = run_refinement(d, index_for(d, ic2), ec2, s2);
  CHECK(again.predictions == r.predictions);
}
