#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crfrefine/dataset.hpp"
#include "crfrefine/inference.hpp"
#include "crfrefine/neighborhood.hpp"
#include "json.hpp"

namespace crfrefine {

enum class SessionStatus { idle, stepping, converged };
[[nodiscard]] const char* to_string(SessionStatus status) noexcept;

/// Where a session's data comes from. Exactly one of manifest_path and
/// synthetic is set; the source is recorded in the event log so a session
/// can be rebuilt from its log alone.
struct SessionSource {
  std::optional<std::filesystem::path> manifest_path;
  std::optional<SyntheticSpec> synthetic;
  EngineConfig engine;
  IndexConfig index;

  [[nodiscard]] nlohmann::json to_json() const;
  /// Parses a create-request body: {"manifest_path": ...} or {"synthetic": {...}},
  /// plus optional "config" overrides applied on top of the given defaults.
  [[nodiscard]] static SessionSource from_json(const nlohmann::json& body, const EngineConfig& engine_defaults,
                                               const IndexConfig& index_defaults);
  /// Patch count without loading embeddings (reads the manifest only).
  [[nodiscard]] std::size_t num_patches() const;
  [[nodiscard]] Dataset load() const;
};

struct SessionEvent {
  std::uint64_t seq = 0;  // 1-based, dense
  std::string type;       // created | annotation | step
  nlohmann::json payload;

  [[nodiscard]] nlohmann::json to_json() const;
};

struct AnnotationBatchResult {
  std::size_t accepted = 0;
  std::size_t overridden = 0;
};

struct StepResult {
  std::size_t iterations_run = 0;
  double max_delta = 0.0;
  double seconds_per_iteration = 0.0;
};

struct StateQuery {
  bool predictions = true;
  bool beliefs = false;
  bool metrics = true;
  std::size_t beliefs_max_cells = 200000;  // above N*L, beliefs fall back to top-3 per vertex
};

/// One interactive refinement session. Steps are serialized; annotation
/// submissions never wait for a running step: they are queued and applied
/// before the next iteration starts. Readers see the snapshot published after
/// the most recent iteration or annotation batch.
class Session {
 public:
  Session(std::string id, SessionSource source, Dataset dataset);
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  [[nodiscard]] const std::string& id() const noexcept { return id_; }
  [[nodiscard]] std::size_t num_vertices() const noexcept { return dataset_.num_patches(); }
  [[nodiscard]] std::size_t num_classes() const noexcept { return dataset_.num_classes(); }
  [[nodiscard]] const std::vector<std::string>& class_names() const noexcept { return dataset_.text.class_names(); }
  [[nodiscard]] std::optional<double> zero_shot_accuracy() const noexcept { return zero_shot_accuracy_; }
  [[nodiscard]] const SessionSource& source() const noexcept { return source_; }
  [[nodiscard]] const Dataset& dataset() const noexcept { return dataset_; }
  [[nodiscard]] SessionStatus status() const;

  /// Validates the whole batch first (ErrorCode::out_of_range, nothing
  /// applied); entries apply in order, a repeated vertex overrides.
  AnnotationBatchResult annotate(std::span<const std::pair<VertexId, ClassId>> batch);

  /// Runs `count` iterations. Returns nullopt when another step is in flight.
  std::optional<StepResult> step(std::size_t count);

  /// Deterministic state document (no ids or timings).
  [[nodiscard]] nlohmann::json state(const StateQuery& query) const;
  [[nodiscard]] Matrix beliefs() const;
  [[nodiscard]] std::vector<ClassId> predictions() const;

  [[nodiscard]] std::vector<SessionEvent> events_since(std::uint64_t after_seq) const;
  /// Blocks until an event with seq > after_seq exists or the timeout passes.
  [[nodiscard]] std::vector<SessionEvent> wait_events(std::uint64_t after_seq,
                                                      std::chrono::milliseconds timeout) const;
  [[nodiscard]] nlohmann::json log() const;
  /// Wakes every waiter in wait_events.
  void notify_all() const;

  /// Test hook called inside step() before each iteration, with the engine
  /// locked and the iteration's ordinal within the call.
  void set_before_iteration(std::function<void(std::size_t)> hook);

  /// Rebuilds a session from an exported log by re-running its events.
  [[nodiscard]] static std::unique_ptr<Session> replay(const nlohmann::json& log, std::string id = "replay");

 private:
  struct Snapshot {
    Matrix beliefs;
    std::vector<ClassId> predictions;
    std::size_t iteration = 0;
    AnnotationSet annotations;
    std::optional<double> last_max_delta;
    SessionStatus status = SessionStatus::idle;
  };

  void drain_pending_locked();
  void publish_locked(SessionStatus status);
  void drain_if_pending();
  void append_event(std::string type, nlohmann::json payload);
  [[nodiscard]] std::shared_ptr<const Snapshot> snapshot() const;

  std::string id_;
  SessionSource source_;
  Dataset dataset_;
  std::optional<double> zero_shot_accuracy_;

  std::mutex engine_mutex_;
  std::unique_ptr<Engine> engine_;
  std::optional<double> last_max_delta_;
  std::function<void(std::size_t)> before_iteration_;
  std::atomic<bool> stepping_{false};

  std::mutex queue_mutex_;
  std::vector<std::pair<VertexId, ClassId>> pending_;
  std::map<VertexId, ClassId> effective_labels_;  // applied plus queued

  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const Snapshot> snapshot_;

  mutable std::mutex log_mutex_;
  mutable std::condition_variable log_cv_;
  mutable std::uint64_t wake_generation_ = 0;
  std::vector<SessionEvent> log_;
};

struct RegistryLimits {
  std::size_t max_n = 200000;
  std::size_t max_sessions = 16;
};

/// Owns live sessions; ids are opaque and never reused within a process.
class SessionRegistry {
 public:
  explicit SessionRegistry(RegistryLimits limits = {}, EngineConfig engine_defaults = {},
                           IndexConfig index_defaults = {});

  /// Throws Error(too_large) above max_n, Error(capacity) at max_sessions,
  /// and the dataset layer's validation errors for bad sources.
  std::shared_ptr<Session> create(const nlohmann::json& body);
  std::shared_ptr<Session> add(SessionSource source, Dataset dataset);
  [[nodiscard]] std::shared_ptr<Session> find(const std::string& id) const;
  bool erase(const std::string& id);
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] std::vector<std::shared_ptr<Session>> all() const;
  [[nodiscard]] const RegistryLimits& limits() const noexcept { return limits_; }

 private:
  std::string next_id();

  RegistryLimits limits_;
  EngineConfig engine_defaults_;
  IndexConfig index_defaults_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
  std::uint64_t nonce_ = 0;
};

}  // namespace crfrefine
