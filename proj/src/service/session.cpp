#include "crfrefine/session.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "crfrefine/config_json.hpp"
#include "crfrefine/error.hpp"
#include "crfrefine/experiments.hpp"
#include "crfrefine/potentials.hpp"
#include "crfrefine/random.hpp"

namespace crfrefine {

using nlohmann::json;

namespace {

constexpr std::size_t kTopK = 3;

json belief_values(const Matrix& q) {
  json rows = json::array();
  for (std::size_t v = 0; v < q.rows(); ++v) {
    const auto row = q.row(v);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

json belief_top_k(const Matrix& q) {
  json labels = json::array();
  json values = json::array();
  std::vector<ClassId> order(q.cols());
  const std::size_t k = std::min(kTopK, q.cols());
  for (std::size_t v = 0; v < q.rows(); ++v) {
    const auto row = q.row(v);
    std::iota(order.begin(), order.end(), ClassId{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](ClassId a, ClassId b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    std::vector<ClassId> top(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<double> probs;
    for (ClassId c : top) probs.push_back(row[c]);
    labels.push_back(std::move(top));
    values.push_back(std::move(probs));
  }
  return json{{"truncated", true}, {"top_k", k}, {"labels", std::move(labels)}, {"values", std::move(values)}};
}

}  // namespace

const char* to_string(SessionStatus status) noexcept {
  switch (status) {
    case SessionStatus::idle:
      return "idle";
    case SessionStatus::stepping:
      return "stepping";
    case SessionStatus::converged:
      return "converged";
  }
  return "idle";
}

json SessionSource::to_json() const {
  json config = engine;
  config.update(json(index));
  json out{{"config", std::move(config)}};
  if (manifest_path) out["manifest_path"] = manifest_path->string();
  if (synthetic) out["synthetic"] = *synthetic;
  return out;
}

SessionSource SessionSource::from_json(const json& body, const EngineConfig& engine_defaults,
                                       const IndexConfig& index_defaults) {
  if (!body.is_object()) throw Error(ErrorCode::invalid_argument, "session request must be a JSON object");
  SessionSource source;
  source.engine = engine_defaults;
  source.index = index_defaults;
  const bool has_manifest = body.contains("manifest_path");
  const bool has_synthetic = body.contains("synthetic");
  if (has_manifest == has_synthetic) {
    throw Error(ErrorCode::invalid_argument, "session request needs exactly one of manifest_path or synthetic");
  }
  try {
    if (has_manifest) {
      source.manifest_path = std::filesystem::absolute(body.at("manifest_path").get<std::string>());
    } else {
      const json& spec = body.at("synthetic");
      if (!spec.is_object()) throw Error(ErrorCode::invalid_argument, "synthetic must be an object");
      SyntheticSpec parsed;
      crfrefine::from_json(spec, parsed);
      source.synthetic = parsed;
    }
    if (auto it = body.find("config"); it != body.end() && !it->is_null()) {
      if (!it->is_object()) throw Error(ErrorCode::invalid_argument, "config must be an object");
      crfrefine::from_json(*it, source.engine);
      crfrefine::from_json(*it, source.index);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, fmt::format("invalid session request: {}", e.what()));
  }
  if (source.synthetic) source.synthetic->validate();
  source.engine.validate();
  source.index.validate();
  return source;
}

std::size_t SessionSource::num_patches() const {
  if (synthetic) return synthetic->num_classes * synthetic->patches_per_class;
  return read_manifest(*manifest_path).num_patches;
}

Dataset SessionSource::load() const {
  if (synthetic) return generate_synthetic(*synthetic).dataset;
  return load_dataset(*manifest_path);
}

json SessionEvent::to_json() const { return json{{"seq", seq}, {"type", type}, {"data", payload}}; }

Session::Session(std::string id, SessionSource source, Dataset dataset)
    : id_(std::move(id)), source_(std::move(source)), dataset_(std::move(dataset)) {
  source_.engine.validate();
  auto index = std::make_shared<const NeighborhoodIndex>(build_index(dataset_.pairwise_embeddings, source_.index));
  UnaryField unary = compute_unary(dataset_.unary_embeddings, dataset_.text, source_.engine.temperature);
  engine_ = std::make_unique<Engine>(std::move(unary), std::move(index), source_.engine);
  if (dataset_.labels) zero_shot_accuracy_ = accuracy(engine_->predictions(), *dataset_.labels);
  {
    std::lock_guard lock(engine_mutex_);
    publish_locked(SessionStatus::idle);
  }
  append_event("created", json{{"source", source_.to_json()},
                               {"num_vertices", num_vertices()},
                               {"num_classes", num_classes()}});
}

SessionStatus Session::status() const { return snapshot()->status; }

AnnotationBatchResult Session::annotate(std::span<const std::pair<VertexId, ClassId>> batch) {
  for (const auto& [vertex, label] : batch) {
    if (vertex >= num_vertices() || label >= num_classes()) {
      throw Error(ErrorCode::out_of_range,
                  fmt::format("annotation out of range: vertex {} label {} (N={}, L={})", vertex, label,
                              num_vertices(), num_classes()));
    }
  }
  AnnotationBatchResult result;
  {
    std::lock_guard lock(queue_mutex_);
    for (const auto& [vertex, label] : batch) {
      auto [it, inserted] = effective_labels_.try_emplace(vertex, label);
      if (!inserted) {
        ++result.overridden;
        it->second = label;
      }
      pending_.emplace_back(vertex, label);
      ++result.accepted;
    }
  }
  drain_if_pending();
  return result;
}

std::optional<StepResult> Session::step(std::size_t count) {
  if (count == 0) throw Error(ErrorCode::invalid_argument, "step count must be positive");
  if (stepping_.exchange(true)) return std::nullopt;
  struct Release {
    std::atomic<bool>& flag;
    ~Release() { flag.store(false); }
  };
  StepResult result;
  {
    Release release{stepping_};
    std::lock_guard lock(engine_mutex_);
    publish_locked(SessionStatus::stepping);
    double seconds = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      if (before_iteration_) before_iteration_(i);
      drain_pending_locked();
      const StepStats stats = engine_->step();
      last_max_delta_ = stats.max_delta;
      seconds += stats.seconds;
      ++result.iterations_run;
      result.max_delta = stats.max_delta;
      append_event("step", json{{"iteration", stats.iteration},
                                {"max_delta", stats.max_delta},
                                {"seconds", stats.seconds}});
      const bool last = i + 1 == count;
      const bool converged = stats.max_delta < source_.engine.convergence_tol;
      publish_locked(!last ? SessionStatus::stepping
                           : (converged ? SessionStatus::converged : SessionStatus::idle));
    }
    result.seconds_per_iteration = seconds / static_cast<double>(count);
  }
  // Annotations that arrived while the engine was locked.
  drain_if_pending();
  return result;
}

void Session::drain_pending_locked() {
  std::vector<std::pair<VertexId, ClassId>> batch;
  {
    std::lock_guard lock(queue_mutex_);
    batch.swap(pending_);
  }
  for (const auto& [vertex, label] : batch) {
    const AuditRecord record = engine_->apply_annotation(vertex, label);
    json payload{{"vertex", record.vertex}, {"label", record.label}, {"iteration", record.iteration}};
    payload["previous"] = record.previous ? json(*record.previous) : json(nullptr);
    append_event("annotation", std::move(payload));
  }
}

void Session::drain_if_pending() {
  for (;;) {
    {
      std::lock_guard lock(queue_mutex_);
      if (pending_.empty()) return;
    }
    // A failed try_lock means a stepper holds the engine; it drains the queue
    // before its next iteration and again after unlocking.
    std::unique_lock lock(engine_mutex_, std::try_to_lock);
    if (!lock.owns_lock()) return;
    drain_pending_locked();
    publish_locked(SessionStatus::idle);
  }
}

void Session::publish_locked(SessionStatus status) {
  auto next = std::make_shared<Snapshot>();
  next->beliefs = engine_->beliefs().data;
  next->predictions = engine_->predictions();
  next->iteration = engine_->iteration();
  next->annotations = engine_->annotations();
  next->last_max_delta = last_max_delta_;
  next->status = status;
  std::lock_guard lock(snapshot_mutex_);
  snapshot_ = std::move(next);
}

std::shared_ptr<const Session::Snapshot> Session::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

void Session::append_event(std::string type, json payload) {
  {
    std::lock_guard lock(log_mutex_);
    log_.push_back(SessionEvent{log_.size() + 1, std::move(type), std::move(payload)});
  }
  log_cv_.notify_all();
}

json Session::state(const StateQuery& query) const {
  const auto snap = snapshot();
  json doc{{"num_vertices", num_vertices()},
           {"num_classes", num_classes()},
           {"class_names", class_names()},
           {"iteration", snap->iteration},
           {"status", to_string(snap->status)}};
  json annotations = json::array();
  for (const auto& [vertex, label] : snap->annotations.entries()) {
    annotations.push_back(json{{"vertex", vertex}, {"label", label}});
  }
  doc["annotations"] = std::move(annotations);
  if (query.predictions) doc["predictions"] = snap->predictions;
  if (query.beliefs) {
    if (snap->beliefs.rows() * snap->beliefs.cols() <= query.beliefs_max_cells) {
      doc["beliefs"] = json{{"truncated", false}, {"values", belief_values(snap->beliefs)}};
    } else {
      doc["beliefs"] = belief_top_k(snap->beliefs);
    }
  }
  if (query.metrics) {
    json metrics{{"iteration", snap->iteration}, {"num_annotations", snap->annotations.size()}};
    metrics["max_delta"] = snap->last_max_delta ? json(*snap->last_max_delta) : json(nullptr);
    if (dataset_.labels) {
      metrics["accuracy"] = accuracy(snap->predictions, *dataset_.labels);
      metrics["accuracy_excl_annotated"] =
          accuracy_excluding(snap->predictions, *dataset_.labels, snap->annotations);
      metrics["zero_shot_accuracy"] = *zero_shot_accuracy_;
    }
    doc["metrics"] = std::move(metrics);
  }
  return doc;
}

Matrix Session::beliefs() const { return snapshot()->beliefs; }

std::vector<ClassId> Session::predictions() const { return snapshot()->predictions; }

std::vector<SessionEvent> Session::events_since(std::uint64_t after_seq) const {
  std::lock_guard lock(log_mutex_);
  if (after_seq >= log_.size()) return {};
  return {log_.begin() + static_cast<std::ptrdiff_t>(after_seq), log_.end()};
}

std::vector<SessionEvent> Session::wait_events(std::uint64_t after_seq, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(log_mutex_);
  const std::uint64_t generation = wake_generation_;
  log_cv_.wait_for(lock, timeout, [&] { return log_.size() > after_seq || wake_generation_ != generation; });
  if (after_seq >= log_.size()) return {};
  return {log_.begin() + static_cast<std::ptrdiff_t>(after_seq), log_.end()};
}

void Session::notify_all() const {
  {
    std::lock_guard lock(log_mutex_);
    ++wake_generation_;
  }
  log_cv_.notify_all();
}

json Session::log() const {
  json events = json::array();
  {
    std::lock_guard lock(log_mutex_);
    for (const auto& e : log_) events.push_back(e.to_json());
  }
  return json{{"session_id", id_}, {"events", std::move(events)}};
}

void Session::set_before_iteration(std::function<void(std::size_t)> hook) {
  std::lock_guard lock(engine_mutex_);
  before_iteration_ = std::move(hook);
}

std::unique_ptr<Session> Session::replay(const json& log, std::string id) {
  const json& events = log.is_object() ? log.at("events") : log;
  if (!events.is_array() || events.empty() || events.front().at("type") != "created") {
    throw Error(ErrorCode::invalid_argument, "event log must start with a created event");
  }
  const json& source_doc = events.front().at("data").at("source");
  SessionSource source = SessionSource::from_json(source_doc, EngineConfig{}, IndexConfig{});
  Dataset dataset = source.load();
  auto session = std::make_unique<Session>(std::move(id), std::move(source), std::move(dataset));
  for (std::size_t i = 1; i < events.size(); ++i) {
    const json& e = events[i];
    const std::string type = e.at("type").get<std::string>();
    const json& data = e.at("data");
    if (type == "annotation") {
      const std::pair<VertexId, ClassId> entry{data.at("vertex").get<VertexId>(), data.at("label").get<ClassId>()};
      session->annotate(std::span(&entry, 1));
    } else if (type == "step") {
      (void)session->step(1);
    } else {
      throw Error(ErrorCode::invalid_argument, fmt::format("unknown event type '{}'", type));
    }
  }
  return session;
}

SessionRegistry::SessionRegistry(RegistryLimits limits, EngineConfig engine_defaults, IndexConfig index_defaults)
    : limits_(limits), engine_defaults_(engine_defaults), index_defaults_(index_defaults) {
  engine_defaults_.validate();
  index_defaults_.validate();
  nonce_ = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
}

std::shared_ptr<Session> SessionRegistry::create(const json& body) {
  SessionSource source = SessionSource::from_json(body, engine_defaults_, index_defaults_);
  const std::size_t n = source.num_patches();
  if (n > limits_.max_n) {
    throw Error(ErrorCode::too_large, fmt::format("session too large: N={} exceeds max_n={}", n, limits_.max_n));
  }
  if (size() >= limits_.max_sessions) {
    throw Error(ErrorCode::capacity, fmt::format("too many sessions (max {})", limits_.max_sessions));
  }
  Dataset dataset = source.load();
  return add(std::move(source), std::move(dataset));
}

std::shared_ptr<Session> SessionRegistry::add(SessionSource source, Dataset dataset) {
  std::string id;
  {
    std::lock_guard lock(mutex_);
    id = next_id();
  }
  auto session = std::make_shared<Session>(id, std::move(source), std::move(dataset));
  std::lock_guard lock(mutex_);
  if (sessions_.size() >= limits_.max_sessions) {
    throw Error(ErrorCode::capacity, fmt::format("too many sessions (max {})", limits_.max_sessions));
  }
  sessions_.emplace(id, session);
  return session;
}

std::shared_ptr<Session> SessionRegistry::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

bool SessionRegistry::erase(const std::string& id) {
  std::shared_ptr<Session> removed;
  {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return false;
    removed = std::move(it->second);
    sessions_.erase(it);
  }
  removed->notify_all();
  return true;
}

std::size_t SessionRegistry::size() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

std::vector<std::shared_ptr<Session>> SessionRegistry::all() const {
  std::lock_guard lock(mutex_);
  std::vector<std::shared_ptr<Session>> out;
  for (const auto& [id, session] : sessions_) out.push_back(session);
  return out;
}

std::string SessionRegistry::next_id() { return fmt::format("{:016x}", mix64(nonce_ + ++counter_)); }

}  // namespace crfrefine
