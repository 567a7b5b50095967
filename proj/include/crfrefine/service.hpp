#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "crfrefine/inference.hpp"
#include "crfrefine/neighborhood.hpp"
#include "crfrefine/session.hpp"

namespace crfrefine {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  RegistryLimits limits;
  EngineConfig engine;
  IndexConfig index;
  std::size_t beliefs_max_cells = 200000;
  std::size_t worker_threads = 16;  // event streams hold a worker each
  std::chrono::milliseconds event_poll{250};
};

/// Overrides from CRFREFINE_LISTEN (host:port), CRFREFINE_MAX_N and
/// CRFREFINE_MAX_SESSIONS when set.
void apply_service_env(ServiceConfig& config);

/// HTTP front end over a SessionRegistry:
///
///   POST   /sessions                      create (201)
///   GET    /sessions                      list ids
///   DELETE /sessions/{id}
///   POST   /sessions/{id}/annotations     [{vertex, label}, ...]
///   POST   /sessions/{id}/step            {count}
///   GET    /sessions/{id}/state?include=predictions,beliefs,metrics
///   GET    /sessions/{id}/events          text/event-stream; ?since=seq, ?follow=0
///   GET    /sessions/{id}/log
///   GET    /sessions/{id}/thumbnails/{v}
class HttpService {
 public:
  explicit HttpService(ServiceConfig config);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds config.host:config.port (port 0 picks a free port). Returns the
  /// bound port, or -1 on failure.
  int bind();
  /// Serves until stop(); bind() first.
  void run();
  /// bind() plus run() on a background thread; returns the bound port or -1.
  int start();
  void stop();

  [[nodiscard]] SessionRegistry& registry() noexcept;
  [[nodiscard]] const ServiceConfig& config() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace crfrefine
