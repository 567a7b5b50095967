#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crfrefine/error.hpp"

namespace crfrefine {

using VertexId = std::uint32_t;
using ClassId = std::uint32_t;

/// Dense row-major matrix of doubles. The shape is fixed at construction.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<double> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  [[nodiscard]] std::span<double> values() noexcept { return data_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// N x d patch embeddings. Construction rejects empty shapes and non-finite values.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  explicit EmbeddingMatrix(Matrix data);

  [[nodiscard]] std::size_t rows() const noexcept { return data_.rows(); }
  [[nodiscard]] std::size_t dim() const noexcept { return data_.cols(); }
  [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept { return data_.row(r); }
  [[nodiscard]] const Matrix& matrix() const noexcept { return data_; }

  // Copy with every row scaled to unit norm. Throws degenerate_embedding
  // naming the first zero-norm row.
  [[nodiscard]] Matrix normalized_rows() const;

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  Matrix data_;
};

/// Prompt-averaged class text embeddings, one row per class.
class ClassTextEmbeddings {
 public:
  ClassTextEmbeddings() = default;
  ClassTextEmbeddings(EmbeddingMatrix embeddings, std::vector<std::string> class_names);

  [[nodiscard]] std::size_t num_classes() const noexcept { return embeddings_.rows(); }
  [[nodiscard]] std::size_t dim() const noexcept { return embeddings_.dim(); }
  [[nodiscard]] const EmbeddingMatrix& embeddings() const noexcept { return embeddings_; }
  [[nodiscard]] const std::vector<std::string>& class_names() const noexcept { return names_; }

 private:
  EmbeddingMatrix embeddings_;
  std::vector<std::string> names_;
};

/// Mean-field marginals Q: N x L, rows are probability distributions.
struct Beliefs {
  Matrix data;
  std::size_t iteration = 0;

  [[nodiscard]] std::size_t num_vertices() const noexcept { return data.rows(); }
  [[nodiscard]] std::size_t num_classes() const noexcept { return data.cols(); }
};

/// Checks row sums (1 +- tolerance) and entry range; returns a description of
/// the first violation, or nullopt.
[[nodiscard]] std::optional<std::string> check_row_stochastic(const Matrix& q, double tolerance = 1e-9);

/// Row argmax with ties broken toward the lowest class index.
[[nodiscard]] ClassId argmax(std::span<const double> values);
[[nodiscard]] std::vector<ClassId> argmax_rows(const Matrix& m);

struct AnnotationRecord {
  VertexId vertex = 0;
  ClassId label = 0;
  std::optional<ClassId> previous;
};

/// Expert annotations: vertex -> class. Re-annotating overwrites and reports
/// the previous label.
class AnnotationSet {
 public:
  AnnotationSet() = default;
  AnnotationSet(std::size_t num_vertices, std::size_t num_classes)
      : num_vertices_(num_vertices), num_classes_(num_classes) {}

  AnnotationRecord set(VertexId vertex, ClassId label);

  [[nodiscard]] std::optional<ClassId> find(VertexId vertex) const;
  [[nodiscard]] bool contains(VertexId vertex) const { return entries_.contains(vertex); }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] std::size_t num_vertices() const noexcept { return num_vertices_; }
  [[nodiscard]] std::size_t num_classes() const noexcept { return num_classes_; }

  // Ordered by vertex id.
  [[nodiscard]] const std::map<VertexId, ClassId>& entries() const noexcept { return entries_; }

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;

 private:
  std::size_t num_vertices_ = 0;
  std::size_t num_classes_ = 0;
  std::map<VertexId, ClassId> entries_;
};

/// a.b / (|a||b|). Throws degenerate_embedding on a zero-norm input.
[[nodiscard]] double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// softmax(logits / temperature) with max subtraction.
[[nodiscard]] std::vector<double> row_softmax(std::span<const double> logits, double temperature = 1.0);

/// In-place variant used on hot paths; `values` becomes softmax(values).
void softmax_inplace(std::span<double> values);

}  // namespace crfrefine
