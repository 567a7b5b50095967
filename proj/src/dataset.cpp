#include "crfrefine/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "json.hpp"

namespace crfrefine {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'E', 'M', 'B', '1'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::size_t kHeaderBytes = 20;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t offset, int bytes) {
  std::uint64_t value = 0;
  for (int i = 0; i < bytes; ++i) value |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  return value;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, fmt::format("cannot write {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io, fmt::format("short write to {}", path.string()));
}

fs::path resolve(const fs::path& base_dir, const fs::path& p) { return p.is_absolute() ? p : base_dir / p; }

[[noreturn]] void mismatch(const std::string& detail) {
  throw Error(ErrorCode::manifest_mismatch, "manifest mismatch: " + detail);
}

}  // namespace

const std::vector<ClassId>& Dataset::require_labels() const {
  if (!labels) throw Error(ErrorCode::missing_labels, fmt::format("dataset '{}' has no ground-truth labels", name));
  return *labels;
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& matrix) {
  if (matrix.dim() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::invalid_argument, "embedding dimension does not fit the EMB1 header");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + matrix.rows() * matrix.dim() * 4);
  for (std::uint8_t b : kMagic) out.push_back(b);
  out.push_back(kVersion);
  out.push_back(kDtypeF32);
  out.push_back(0);
  out.push_back(0);
  put_le(out, matrix.rows(), 8);
  put_le(out, matrix.dim(), 4);
  for (double v : matrix.matrix().values()) put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
  return out;
}

EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()) || bytes[4] != kVersion ||
      bytes[5] != kDtypeF32) {
    throw Error(ErrorCode::unsupported_format, "unsupported format");
  }
  if (bytes.size() < kHeaderBytes) throw Error(ErrorCode::corrupt_file, "corrupt file: truncated header");
  const std::uint64_t rows = get_le(bytes, 8, 8);
  const std::uint64_t dim = get_le(bytes, 16, 4);
  const std::uint64_t payload = bytes.size() - kHeaderBytes;
  if (dim != 0 && rows > payload / 4 / dim) throw Error(ErrorCode::corrupt_file, "corrupt file: truncated payload");
  if (rows * dim * 4 != payload) {
    throw Error(ErrorCode::corrupt_file,
                fmt::format("corrupt file: {} payload bytes for {}x{} float32", payload, rows, dim));
  }
  std::vector<double> values(rows * dim);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, kHeaderBytes + 4 * i, 4)));
  }
  return EmbeddingMatrix(Matrix(rows, dim, std::move(values)));
}

void write_embeddings(const EmbeddingMatrix& matrix, const fs::path& path) {
  write_file(path, encode_embeddings(matrix));
}

EmbeddingMatrix read_embeddings(const fs::path& path) { return decode_embeddings(read_file(path)); }

void write_labels(std::span<const ClassId> labels, const fs::path& path) {
  std::string text;
  for (ClassId l : labels) {
    text += std::to_string(l);
    text += '\n';
  }
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<ClassId> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot open {}", path.string()));
  std::vector<ClassId> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ClassId value = 0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), value);
    if (ec != std::errc{} || ptr != line.data() + line.size()) {
      throw Error(ErrorCode::corrupt_file, fmt::format("{}:{}: not a class index: '{}'", path.string(), line_no, line));
    }
    labels.push_back(value);
  }
  return labels;
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) mismatch(fmt::format("cannot open manifest {}", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    mismatch(fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
  }
  DatasetManifest m;
  try {
    m.name = doc.at("name").get<std::string>();
    m.num_patches = doc.at("num_patches").get<std::size_t>();
    m.num_classes = doc.at("num_classes").get<std::size_t>();
    m.class_names = doc.at("class_names").get<std::vector<std::string>>();
    m.unary_embeddings_path = doc.at("unary_embeddings_path").get<std::string>();
    m.pairwise_embeddings_path = doc.at("pairwise_embeddings_path").get<std::string>();
    m.text_embeddings_path = doc.at("text_embeddings_path").get<std::string>();
    if (doc.contains("labels_path") && !doc["labels_path"].is_null()) {
      m.labels_path = doc["labels_path"].get<std::string>();
    }
    if (doc.contains("thumbnails_dir") && !doc["thumbnails_dir"].is_null()) {
      m.thumbnails_dir = doc["thumbnails_dir"].get<std::string>();
    }
    if (doc.contains("grid") && !doc["grid"].is_null()) {
      const auto g = doc["grid"].get<std::vector<std::size_t>>();
      if (g.size() != 2) mismatch("grid must be [rows, cols]");
      m.grid = std::pair{g[0], g[1]};
    }
  } catch (const json::exception& e) {
    mismatch(fmt::format("{}: {}", path.string(), e.what()));
  }
  const fs::path base = path.parent_path();
  m.unary_embeddings_path = resolve(base, m.unary_embeddings_path);
  m.pairwise_embeddings_path = resolve(base, m.pairwise_embeddings_path);
  m.text_embeddings_path = resolve(base, m.text_embeddings_path);
  if (m.labels_path) m.labels_path = resolve(base, *m.labels_path);
  if (m.thumbnails_dir) m.thumbnails_dir = resolve(base, *m.thumbnails_dir);
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  json doc{
      {"name", m.name},
      {"num_patches", m.num_patches},
      {"num_classes", m.num_classes},
      {"class_names", m.class_names},
      {"unary_embeddings_path", m.unary_embeddings_path.generic_string()},
      {"pairwise_embeddings_path", m.pairwise_embeddings_path.generic_string()},
      {"text_embeddings_path", m.text_embeddings_path.generic_string()},
  };
  if (m.labels_path) doc["labels_path"] = m.labels_path->generic_string();
  if (m.thumbnails_dir) doc["thumbnails_dir"] = m.thumbnails_dir->generic_string();
  if (m.grid) doc["grid"] = {m.grid->first, m.grid->second};
  const std::string text = doc.dump(2) + "\n";
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Dataset load_dataset(const fs::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  const auto load = [](const fs::path& p) {
    if (!fs::exists(p)) mismatch(fmt::format("referenced file {} does not exist", p.string()));
    return read_embeddings(p);
  };
  EmbeddingMatrix unary = load(m.unary_embeddings_path);
  EmbeddingMatrix pairwise = load(m.pairwise_embeddings_path);
  EmbeddingMatrix text = load(m.text_embeddings_path);

  if (unary.rows() != m.num_patches) {
    mismatch(fmt::format("unary embeddings have {} rows, manifest says {}", unary.rows(), m.num_patches));
  }
  if (pairwise.rows() != m.num_patches) {
    mismatch(fmt::format("pairwise embeddings have {} rows, manifest says {}", pairwise.rows(), m.num_patches));
  }
  if (text.rows() != m.num_classes || m.class_names.size() != m.num_classes) {
    mismatch(fmt::format("{} text embeddings and {} class names for {} classes", text.rows(), m.class_names.size(),
                         m.num_classes));
  }
  if (text.dim() != unary.dim()) {
    mismatch(fmt::format("text dimension {} differs from unary dimension {}", text.dim(), unary.dim()));
  }

  Dataset d{m.name, std::move(unary), std::move(pairwise), ClassTextEmbeddings(std::move(text), m.class_names),
            std::nullopt, m.thumbnails_dir, m.grid};
  if (m.labels_path) {
    if (!fs::exists(*m.labels_path)) mismatch(fmt::format("labels file {} does not exist", m.labels_path->string()));
    auto labels = read_labels(*m.labels_path);
    if (labels.size() != m.num_patches) {
      mismatch(fmt::format("labels file has {} entries, manifest says {}", labels.size(), m.num_patches));
    }
    if (auto bad = std::find_if(labels.begin(), labels.end(), [&](ClassId l) { return l >= m.num_classes; });
        bad != labels.end()) {
      mismatch(fmt::format("label {} at line {} is not below {}", *bad, bad - labels.begin() + 1, m.num_classes));
    }
    d.labels = std::move(labels);
  }
  return d;
}

fs::path write_dataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io, fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  DatasetManifest m;
  m.name = dataset.name;
  m.num_patches = dataset.num_patches();
  m.num_classes = dataset.num_classes();
  m.class_names = dataset.text.class_names();
  m.unary_embeddings_path = "unary.emb";
  m.pairwise_embeddings_path = "pairwise.emb";
  m.text_embeddings_path = "text.emb";
  m.thumbnails_dir = dataset.thumbnails_dir;
  m.grid = dataset.grid;
  write_embeddings(dataset.unary_embeddings, dir / m.unary_embeddings_path);
  write_embeddings(dataset.pairwise_embeddings, dir / m.pairwise_embeddings_path);
  write_embeddings(dataset.text.embeddings(), dir / m.text_embeddings_path);
  if (dataset.labels) {
    m.labels_path = "labels.txt";
    write_labels(*dataset.labels, dir / *m.labels_path);
  }
  const fs::path manifest_path = dir / "manifest.json";
  write_manifest(m, manifest_path);
  return manifest_path;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw Error(ErrorCode::invalid_argument, "synthetic: num_classes must be >= 2");
  if (patches_per_class < 1) throw Error(ErrorCode::invalid_argument, "synthetic: patches_per_class must be >= 1");
  if (dim_unary < num_classes + 1) {
    throw Error(ErrorCode::invalid_argument, "synthetic: dim_unary must be at least num_classes + 1");
  }
  if (dim_pairwise < num_classes) {
    throw Error(ErrorCode::invalid_argument, "synthetic: dim_pairwise must be at least num_classes");
  }
  if (!(cluster_separation > 0.0) || !std::isfinite(cluster_separation)) {
    throw Error(ErrorCode::invalid_argument, "synthetic: cluster_separation must be positive");
  }
  if (!(unary_noise >= 0.0 && unary_noise <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "synthetic: unary_noise must lie in [0, 1]");
  }
  if (!(unary_common_component >= 0.0) || !std::isfinite(unary_common_component)) {
    throw Error(ErrorCode::invalid_argument, "synthetic: unary_common_component must be >= 0");
  }
  if (!(unary_jitter > 0.0) || !std::isfinite(unary_jitter)) {
    throw Error(ErrorCode::invalid_argument, "synthetic: unary_jitter must be positive");
  }
}

namespace {

void normalize(std::span<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

// `count` orthonormal random directions in `dim` dimensions (Gram-Schmidt).
Matrix orthonormal_directions(std::size_t count, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix basis(count, dim);
  for (std::size_t i = 0; i < count; ++i) {
    auto row = basis.row(i);
    for (;;) {
      for (double& x : row) x = normal(rng);
      for (std::size_t j = 0; j < i; ++j) {
        const auto prev = basis.row(j);
        const double proj = std::inner_product(row.begin(), row.end(), prev.begin(), 0.0);
        for (std::size_t k = 0; k < dim; ++k) row[k] -= proj * prev[k];
      }
      const double n2 = std::inner_product(row.begin(), row.end(), row.begin(), 0.0);
      if (n2 > 1e-8) break;
    }
    normalize(row);
  }
  return basis;
}

// Vertices of a centred regular simplex built from `basis` rows [first, first + count).
Matrix simplex_directions(const Matrix& basis, std::size_t first, std::size_t count) {
  Matrix out(count, basis.cols());
  for (std::size_t c = 0; c < count; ++c) {
    for (std::size_t k = 0; k < basis.cols(); ++k) {
      double mean = 0.0;
      for (std::size_t j = 0; j < count; ++j) mean += basis(first + j, k);
      out(c, k) = basis(first + c, k) - mean / static_cast<double>(count);
    }
    normalize(out.row(c));
  }
  return out;
}

void sample_patch(std::span<double> out, std::span<const double> mean, std::span<const double> common,
                  double common_weight, double separation, double jitter, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, jitter / std::sqrt(static_cast<double>(out.size())));
  for (std::size_t k = 0; k < out.size(); ++k) {
    double v = separation * mean[k] + normal(rng);
    if (!common.empty()) v += common_weight * common[k];
    out[k] = v;
  }
  normalize(out);
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t L = spec.num_classes;
  const std::size_t N = L * spec.patches_per_class;
  std::mt19937_64 rng(spec.seed);

  // Unary space: one shared direction plus a simplex of class directions.
  const Matrix unary_basis = orthonormal_directions(L + 1, spec.dim_unary, rng);
  const auto common = unary_basis.row(0);
  const Matrix unary_dirs = simplex_directions(unary_basis, 1, L);
  const Matrix pairwise_basis = orthonormal_directions(L, spec.dim_pairwise, rng);
  const Matrix pairwise_dirs = simplex_directions(pairwise_basis, 0, L);

  Matrix text(L, spec.dim_unary);
  for (std::size_t c = 0; c < L; ++c) {
    for (std::size_t k = 0; k < spec.dim_unary; ++k) {
      text(c, k) = spec.unary_common_component * common[k] + spec.cluster_separation * unary_dirs(c, k);
    }
    normalize(text.row(c));
  }

  std::vector<ClassId> labels(N);
  for (std::size_t v = 0; v < N; ++v) labels[v] = static_cast<ClassId>(v / spec.patches_per_class);

  // Exactly round(noise * N) corrupted patches, chosen uniformly.
  const auto num_corrupted = static_cast<std::size_t>(std::llround(spec.unary_noise * static_cast<double>(N)));
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> corrupted(N, false);
  for (std::size_t i = 0; i < num_corrupted; ++i) corrupted[order[i]] = true;

  Matrix unary(N, spec.dim_unary);
  Matrix pairwise(N, spec.dim_pairwise);
  std::uniform_int_distribution<std::size_t> other_class(0, L - 2);
  for (std::size_t v = 0; v < N; ++v) {
    std::size_t source = labels[v];
    if (corrupted[v]) {
      const std::size_t draw = other_class(rng);
      source = draw >= labels[v] ? draw + 1 : draw;
    }
    sample_patch(unary.row(v), unary_dirs.row(source), common, spec.unary_common_component,
                 spec.cluster_separation, spec.unary_jitter, rng);
    sample_patch(pairwise.row(v), pairwise_dirs.row(labels[v]), {}, 0.0, spec.cluster_separation, 1.0, rng);
  }

  // Stored as float32 on disk; round now so the in-memory dataset equals a reload.
  for (Matrix* m : {&text, &unary, &pairwise}) {
    for (double& x : m->values()) x = static_cast<float>(x);
  }

  std::vector<std::string> names(L);
  for (std::size_t c = 0; c < L; ++c) names[c] = fmt::format("class_{}", c);

  Dataset d{fmt::format("synthetic-L{}-n{}-noise{}-seed{}", L, spec.patches_per_class, spec.unary_noise, spec.seed),
            EmbeddingMatrix(std::move(unary)),
            EmbeddingMatrix(std::move(pairwise)),
            ClassTextEmbeddings(EmbeddingMatrix(std::move(text)), std::move(names)),
            std::move(labels),
            std::nullopt,
            std::nullopt};
  return SyntheticDataset{std::move(d), std::move(corrupted), num_corrupted};
}

fs::path generate_synthetic(const SyntheticSpec& spec, const fs::path& dir) {
  SyntheticDataset s = generate_synthetic(spec);
  return write_dataset(s.dataset, dir);
}

}  // namespace crfrefine
