#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crfrefine/core.hpp"

namespace crfrefine {

/// JSON manifest tying the embedding, text and label files of one dataset
/// together. Relative paths resolve against the manifest's directory.
struct DatasetManifest {
  std::string name;
  std::size_t num_patches = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::filesystem::path unary_embeddings_path;
  std::filesystem::path pairwise_embeddings_path;
  std::filesystem::path text_embeddings_path;
  std::optional<std::filesystem::path> labels_path;
  std::optional<std::filesystem::path> thumbnails_dir;
  std::optional<std::pair<std::size_t, std::size_t>> grid;  // (rows, cols)
};

struct Dataset {
  std::string name;
  EmbeddingMatrix unary_embeddings;     // space of the zero-shot classifier
  EmbeddingMatrix pairwise_embeddings;  // space used for patch-patch similarity
  ClassTextEmbeddings text;
  std::optional<std::vector<ClassId>> labels;
  std::optional<std::filesystem::path> thumbnails_dir;
  std::optional<std::pair<std::size_t, std::size_t>> grid;

  [[nodiscard]] std::size_t num_patches() const noexcept { return unary_embeddings.rows(); }
  [[nodiscard]] std::size_t num_classes() const noexcept { return text.num_classes(); }
  [[nodiscard]] const std::vector<ClassId>& require_labels() const;
};

// EMB1: 20-byte little-endian header (magic "EMB1", u8 version 1, u8 dtype 1
// = float32, 2 reserved zero bytes, u64 rows, u32 dim) followed by row-major
// float32 values. Values are narrowed to float32 on write.
void write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path);
[[nodiscard]] EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
[[nodiscard]] std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& matrix);
[[nodiscard]] EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes);

// One class index per line, ASCII decimal.
void write_labels(std::span<const ClassId> labels, const std::filesystem::path& path);
[[nodiscard]] std::vector<ClassId> read_labels(const std::filesystem::path& path);

[[nodiscard]] DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Loads every file the manifest references and cross-checks shapes
/// (ErrorCode::manifest_mismatch on disagreement).
[[nodiscard]] Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `dataset` as manifest.json + EMB1/label files into `dir`; returns the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct SyntheticSpec {
  std::size_t num_classes = 5;
  std::size_t patches_per_class = 400;
  std::size_t dim_unary = 64;
  std::size_t dim_pairwise = 64;
  // Norm of the class-mean component relative to unit isotropic noise.
  double cluster_separation = 1.0;
  // Fraction of patches whose unary embedding is drawn from a wrong class.
  double unary_noise = 0.4;
  // Weight of a direction shared by every unary embedding and text
  // embedding. Larger values compress cosine gaps, as in real
  // vision-language embedding spaces.
  double unary_common_component = 16.0;
  // Scale of the isotropic noise in the unary space (the pairwise space uses 1).
  double unary_jitter = 4.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  Dataset dataset;
  std::vector<bool> corrupted;  // per patch: unary embedding replaced by a wrong class
  std::size_t num_corrupted = 0;
};

/// Deterministic given the spec (including seed).
[[nodiscard]] SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Generates and writes the dataset into `dir`; returns the manifest path.
std::filesystem::path generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace crfrefine
