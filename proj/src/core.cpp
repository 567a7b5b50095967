#include "crfrefine/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fmt/format.h>
#include <thread>

#include "crfrefine/kernels.hpp"
#include "crfrefine/parallel.hpp"

namespace crfrefine {

namespace {
std::atomic<std::size_t> g_workers{0};
}

void set_worker_count(std::size_t workers) noexcept { g_workers.store(workers); }

std::size_t worker_count() noexcept {
  const std::size_t w = g_workers.load();
  if (w != 0) return w;
  return std::max(1u, std::thread::hardware_concurrency());
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("matrix data has {} values, expected {}x{}", data_.size(), rows_, cols_));
  }
}

EmbeddingMatrix::EmbeddingMatrix(Matrix data) : data_(std::move(data)) {
  if (data_.rows() == 0 || data_.cols() == 0) {
    throw Error(ErrorCode::invalid_argument, "embedding matrix must have at least one row and column");
  }
  const auto values = data_.values();
  const auto bad = std::find_if(values.begin(), values.end(), [](double v) { return !std::isfinite(v); });
  if (bad != values.end()) {
    const auto offset = static_cast<std::size_t>(bad - values.begin());
    throw Error(ErrorCode::invalid_argument,
                fmt::format("non-finite embedding value at row {}", offset / data_.cols()));
  }
}

Matrix EmbeddingMatrix::normalized_rows() const {
  Matrix out = data_;
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double norm = std::sqrt(k.dot(row.data(), row.data(), row.size()));
    if (!(norm > 0.0)) {
      throw Error(ErrorCode::degenerate_embedding, fmt::format("degenerate embedding: row {} has zero norm", r));
    }
    for (double& v : row) v /= norm;
  }
  return out;
}

ClassTextEmbeddings::ClassTextEmbeddings(EmbeddingMatrix embeddings, std::vector<std::string> class_names)
    : embeddings_(std::move(embeddings)), names_(std::move(class_names)) {
  if (embeddings_.rows() < 2) throw Error(ErrorCode::invalid_argument, "at least two classes are required");
  if (names_.size() != embeddings_.rows()) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("{} class names for {} text embeddings", names_.size(), embeddings_.rows()));
  }
  auto sorted = names_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error(ErrorCode::invalid_argument, "class names must be distinct");
  }
}

std::optional<std::string> check_row_stochastic(const Matrix& q, double tolerance) {
  for (std::size_t v = 0; v < q.rows(); ++v) {
    double sum = 0.0;
    for (double p : q.row(v)) {
      if (!(p >= 0.0 && p <= 1.0)) return fmt::format("row {} has entry {} outside [0, 1]", v, p);
      sum += p;
    }
    if (std::abs(sum - 1.0) > tolerance) return fmt::format("row {} sums to {:.17g}", v, sum);
  }
  return std::nullopt;
}

ClassId argmax(std::span<const double> values) {
  return static_cast<ClassId>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<ClassId> argmax_rows(const Matrix& m) {
  std::vector<ClassId> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = argmax(m.row(r));
  return out;
}

AnnotationRecord AnnotationSet::set(VertexId vertex, ClassId label) {
  if (vertex >= num_vertices_ || label >= num_classes_) {
    throw Error(ErrorCode::out_of_range, fmt::format("annotation ({}, {}) outside {} vertices x {} classes", vertex,
                                                     label, num_vertices_, num_classes_));
  }
  AnnotationRecord record{vertex, label, std::nullopt};
  auto [it, inserted] = entries_.try_emplace(vertex, label);
  if (!inserted) {
    record.previous = it->second;
    it->second = label;
  }
  return record;
}

std::optional<ClassId> AnnotationSet::find(VertexId vertex) const {
  const auto it = entries_.find(vertex);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::invalid_argument, fmt::format("dimension mismatch: {} vs {}", a.size(), b.size()));
  }
  const auto& k = kernels::active();
  const double na = std::sqrt(k.dot(a.data(), a.data(), a.size()));
  const double nb = std::sqrt(k.dot(b.data(), b.data(), b.size()));
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::degenerate_embedding, "degenerate embedding");
  return std::clamp(k.dot(a.data(), b.data(), a.size()) / (na * nb), -1.0, 1.0);
}

void softmax_inplace(std::span<double> values) {
  const double top = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double& v : values) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : values) v /= sum;
}

std::vector<double> row_softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::invalid_argument, "temperature must be positive");
  if (logits.empty()) throw Error(ErrorCode::invalid_argument, "softmax of an empty vector");
  std::vector<double> out(logits.begin(), logits.end());
  for (double& v : out) {
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "non-finite logit");
    v /= temperature;
  }
  softmax_inplace(out);
  return out;
}

}  // namespace crfrefine
