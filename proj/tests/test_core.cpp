#include <cmath>
#include <random>
#include <set>

#include "crfrefine/core.hpp"
#include "crfrefine/parallel.hpp"
#include "crfrefine/random.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace crfrefine;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::io;
}

}  // namespace

TEST_CASE("cosine similarity examples") {
  const std::vector<double> x{1.0, 0.0, 0.0};
  CHECK(cosine_similarity(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0}) == 0.0);
  CHECK(std::abs(cosine_similarity(std::vector<double>{3.0, 4.0}, std::vector<double>{4.0, 3.0}) - 24.0 / 25.0) <
        1e-15);
  CHECK(std::abs(cosine_similarity(std::vector<double>{1.0, 1.0}, std::vector<double>{-2.0, -2.0}) + 1.0) < 1e-15);
}

TEST_CASE("cosine similarity rejects zero norm") {
  try {
    (void)cosine_similarity(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 0.0});
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::degenerate_embedding);
    CHECK(std::string(e.what()).find("degenerate embedding") != std::string::npos);
  }
}

TEST_CASE("cosine similarity is symmetric and scale invariant") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix m = testing::random_matrix(2, 7, rng);
    const double c = scale(rng);
    std::vector<double> scaled(m.row(0).begin(), m.row(0).end());
    for (double& x : scaled) x *= c;
    const double ab = cosine_similarity(m.row(0), m.row(1));
    CHECK(ab == cosine_similarity(m.row(1), m.row(0)));
    CHECK(std::abs(ab - cosine_similarity(scaled, m.row(1))) < 1e-14);
    CHECK(ab >= -1.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("row softmax examples") {
  const auto u = row_softmax(std::vector<double>{0.0, 0.0, 0.0}, 1.0);
  for (double p : u) CHECK(std::abs(p - 1.0 / 3.0) < 1e-15);
  const double e = std::exp(1.0);
  const auto p = row_softmax(std::vector<double>{1.0, 0.0}, 1.0);
  CHECK(std::abs(p[0] - e / (e + 1.0)) < 1e-15);
  CHECK(std::abs(p[1] - 1.0 / (e + 1.0)) < 1e-15);
  const auto big = row_softmax(std::vector<double>{1000.0, 999.0}, 1.0);
  CHECK(std::isfinite(big[0]));
  CHECK(std::abs(big[0] - e / (e + 1.0)) < 1e-15);
  CHECK(std::abs(big[1] - 1.0 / (e + 1.0)) < 1e-15);
  const auto scaled = row_softmax(std::vector<double>{0.02, 0.01}, 0.01);
  CHECK(std::abs(scaled[0] - e / (e + 1.0)) < 1e-12);
}

TEST_CASE("row softmax properties") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  std::uniform_real_distribution<double> temp(0.005, 5.0);
  for (int trial = 0; trial < 300; ++trial) {
    const Matrix m = testing::random_matrix(1, 5, rng, -3.0, 3.0);
    const double t = temp(rng);
    const auto p = row_softmax(m.row(0), t);
    double sum = 0.0;
    for (double x : p) sum += x;
    CHECK(std::abs(sum - 1.0) < 1e-12);
    const double c = shift(rng);
    std::vector<double> shifted(m.row(0).begin(), m.row(0).end());
    for (double& x : shifted) x += c;
    // Invariance holds for the scaled logits; shift by c * t so the
    // softmax argument moves by exactly c.
    std::vector<double> shifted_scaled(m.row(0).begin(), m.row(0).end());
    for (double& x : shifted_scaled) x += c * t;
    const auto q = row_softmax(shifted_scaled, t);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
    CHECK(argmax(p) == argmax(m.row(0)));
  }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
  CHECK(argmax(std::vector<double>{0.1, 0.45, 0.45}) == 1);
  Matrix m(2, 3, 0.0);
  m(0, 2) = 1.0;
  CHECK(argmax_rows(m) == std::vector<ClassId>{2, 0});
}

TEST_CASE("embedding matrix validation") {
  CHECK(code_of([] { EmbeddingMatrix(Matrix(0, 3)); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { EmbeddingMatrix(Matrix(3, 0)); }) == ErrorCode::invalid_argument);
  Matrix bad(2, 2, 1.0);
  bad(1, 0) = std::nan("");
  CHECK(code_of([&] { EmbeddingMatrix{bad}; }) == ErrorCode::invalid_argument);
  bad(1, 0) = INFINITY;
  CHECK(code_of([&] { EmbeddingMatrix{bad}; }) == ErrorCode::invalid_argument);

  Matrix zero_row(3, 2, 1.0);
  zero_row(1, 0) = 0.0;
  zero_row(1, 1) = 0.0;
  const EmbeddingMatrix e(zero_row);
  try {
    (void)e.normalized_rows();
    FAIL("no error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::degenerate_embedding);
    CHECK(std::string(err.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("class text embeddings validation") {
  const EmbeddingMatrix two(Matrix(2, 3, 1.0));
  CHECK_NOTHROW(ClassTextEmbeddings(two, {"a", "b"}));
  CHECK(code_of([&] { ClassTextEmbeddings(two, {"a", "a"}); }) == ErrorCode::invalid_argument);
  CHECK(code_of([&] { ClassTextEmbeddings(two, {"a"}); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { ClassTextEmbeddings(EmbeddingMatrix(Matrix(1, 3, 1.0)), {"a"}); }) ==
        ErrorCode::invalid_argument);
}

TEST_CASE("annotation set overwrite and range") {
  AnnotationSet set(5, 3);
  auto first = set.set(3, 2);
  CHECK_FALSE(first.previous.has_value());
  auto second = set.set(3, 1);
  REQUIRE(second.previous.has_value());
  CHECK(*second.previous == 2);
  CHECK(set.size() == 1);
  CHECK(*set.find(3) == 1);
  CHECK_FALSE(set.find(0).has_value());
  CHECK(code_of([&] { set.set(5, 0); }) == ErrorCode::out_of_range);
  CHECK(code_of([&] { set.set(0, 3); }) == ErrorCode::out_of_range);
  CHECK(set.size() == 1);
}

TEST_CASE("row stochastic check") {
  Matrix q(2, 2, 0.5);
  CHECK_FALSE(check_row_stochastic(q).has_value());
  q(1, 0) = 0.6;
  CHECK(check_row_stochastic(q).has_value());
  q(1, 0) = 1.5;
  q(1, 1) = -0.5;
  CHECK(check_row_stochastic(q).has_value());
}

TEST_CASE("counter rng is a pure function of its key") {
  CounterRng a(1, 2, 3, 4);
  CounterRng b(1, 2, 3, 4);
  CounterRng c(1, 2, 3, 5);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    CHECK(x == b());
    differs = differs || x != c();
  }
  CHECK(differs);
}

TEST_CASE("counter rng below is in range and roughly uniform") {
  CounterRng rng(9, 0, 0, 0);
  std::vector<int> counts(7, 0);
  const int draws = 70000;
  for (int i = 0; i < draws; ++i) {
    const auto x = rng.below(7);
    REQUIRE(x < 7);
    ++counts[x];
  }
  // Chi-square with 6 degrees of freedom; 22.46 is the 0.999 quantile.
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - draws / 7.0) * (c - draws / 7.0) / (draws / 7.0);
  CHECK(chi2 < 22.46);
}

TEST_CASE("parallel_for covers every index exactly once") {
  for (std::size_t workers : {1u, 2u, 3u, 8u}) {
    set_worker_count(workers);
    for (std::size_t n : {0u, 1u, 5u, 1000u, 4097u}) {
      std::vector<int> hits(n, 0);
      parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) ++hits[i];
      }, 16);
      for (int h : hits) CHECK(h == 1);
    }
  }
  set_worker_count(0);
}
