#include "crfrefine/service.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "crfrefine/error.hpp"
#include "httplib.h"
#include "json.hpp"

namespace crfrefine {

using nlohmann::json;

namespace {

const char* code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
      return "invalid_argument";
    case ErrorCode::degenerate_embedding:
      return "degenerate_embedding";
    case ErrorCode::unsupported_format:
      return "unsupported_format";
    case ErrorCode::corrupt_file:
      return "corrupt_file";
    case ErrorCode::manifest_mismatch:
      return "manifest_mismatch";
    case ErrorCode::graph_too_small:
      return "graph_too_small";
    case ErrorCode::out_of_range:
      return "out_of_range";
    case ErrorCode::missing_annotations:
      return "missing_annotations";
    case ErrorCode::too_large:
      return "too_large";
    case ErrorCode::capacity:
      return "capacity";
    case ErrorCode::missing_labels:
      return "missing_labels";
    case ErrorCode::io:
      return "io";
  }
  return "error";
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::out_of_range:
      return 422;
    case ErrorCode::too_large:
      return 413;
    case ErrorCode::capacity:
      return 503;
    case ErrorCode::io:
      return 500;
    default:
      return 400;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  send_json(res, status, json{{"error", message}, {"code", code}});
}

// Runs a handler and maps exceptions onto HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const Error& e) {
    send_error(res, http_status(e.code()), code_name(e.code()), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "invalid_argument", fmt::format("invalid JSON: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    send_error(res, 400, "invalid_argument", e.what());
  } catch (const std::out_of_range& e) {
    send_error(res, 400, "invalid_argument", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

std::vector<std::pair<VertexId, ClassId>> parse_annotations(const json& body, std::size_t n, std::size_t l) {
  const json& list = body.is_object() && body.contains("annotations") ? body.at("annotations") : body;
  if (!list.is_array()) throw Error(ErrorCode::invalid_argument, "annotations must be a JSON array");
  std::vector<std::pair<VertexId, ClassId>> batch;
  batch.reserve(list.size());
  for (const json& entry : list) {
    if (!entry.is_object() || !entry.contains("vertex") || !entry.contains("label")) {
      throw Error(ErrorCode::invalid_argument, "each annotation needs vertex and label");
    }
    const json& v = entry.at("vertex");
    const json& c = entry.at("label");
    if (!v.is_number_integer() || !c.is_number_integer()) {
      throw Error(ErrorCode::invalid_argument, "vertex and label must be integers");
    }
    const auto vi = v.get<std::int64_t>();
    const auto ci = c.get<std::int64_t>();
    if (vi < 0 || ci < 0 || static_cast<std::uint64_t>(vi) >= n || static_cast<std::uint64_t>(ci) >= l) {
      throw Error(ErrorCode::out_of_range,
                  fmt::format("annotation out of range: vertex {} label {} (N={}, L={})", vi, ci, n, l));
    }
    batch.emplace_back(static_cast<VertexId>(vi), static_cast<ClassId>(ci));
  }
  return batch;
}

std::string content_type_for(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  return "application/octet-stream";
}

std::string format_event(const SessionEvent& e) {
  return fmt::format("id: {}\nevent: {}\ndata: {}\n\n", e.seq, e.type, e.to_json().dump());
}

}  // namespace

void apply_service_env(ServiceConfig& config) {
  if (const char* listen = std::getenv("CRFREFINE_LISTEN")) {
    const std::string value(listen);
    const auto colon = value.rfind(':');
    if (colon == std::string::npos) {
      config.host = value;
    } else {
      if (colon > 0) config.host = value.substr(0, colon);
      config.port = std::stoi(value.substr(colon + 1));
    }
  }
  if (const char* v = std::getenv("CRFREFINE_MAX_N")) config.limits.max_n = std::stoull(v);
  if (const char* v = std::getenv("CRFREFINE_MAX_SESSIONS")) config.limits.max_sessions = std::stoull(v);
}

struct HttpService::Impl {
  explicit Impl(ServiceConfig c) : config(std::move(c)), registry(config.limits, config.engine, config.index) {
    const std::size_t threads = config.worker_threads;
    server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    routes();
  }

  std::shared_ptr<Session> session_or_404(const httplib::Request& req, httplib::Response& res) {
    auto session = registry.find(req.matches[1].str());
    if (!session) send_error(res, 404, "not_found", fmt::format("unknown session '{}'", req.matches[1].str()));
    return session;
  }

  void routes() {
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, json{{"status", "ok"}});
    });

    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        auto session = registry.create(body);
        json out{{"session_id", session->id()},
                 {"N", session->num_vertices()},
                 {"L", session->num_classes()},
                 {"class_names", session->class_names()}};
        if (auto acc = session->zero_shot_accuracy()) out["zero_shot_accuracy"] = *acc;
        send_json(res, 201, out);
      });
    });

    server.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
      json ids = json::array();
      for (const auto& s : registry.all()) ids.push_back(s->id());
      send_json(res, 200, json{{"sessions", ids}});
    });

    server.Delete(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      if (!registry.erase(req.matches[1].str())) {
        send_error(res, 404, "not_found", fmt::format("unknown session '{}'", req.matches[1].str()));
        return;
      }
      res.status = 204;
    });

    server.Post(R"(/sessions/([^/]+)/annotations)", [this](const httplib::Request& req, httplib::Response& res) {
      auto session = session_or_404(req, res);
      if (!session) return;
      guarded(res, [&] {
        const auto batch = parse_annotations(json::parse(req.body), session->num_vertices(), session->num_classes());
        const AnnotationBatchResult r = session->annotate(batch);
        send_json(res, 200, json{{"accepted", r.accepted}, {"overridden", r.overridden}});
      });
    });

    server.Post(R"(/sessions/([^/]+)/step)", [this](const httplib::Request& req, httplib::Response& res) {
      auto session = session_or_404(req, res);
      if (!session) return;
      guarded(res, [&] {
        std::size_t count = 1;
        if (!req.body.empty()) {
          const json body = json::parse(req.body);
          if (auto it = body.find("count"); it != body.end() && !it->is_null()) {
            if (!it->is_number_integer() || it->get<std::int64_t>() < 1) {
              throw Error(ErrorCode::invalid_argument, "count must be a positive integer");
            }
            count = it->get<std::size_t>();
          }
        }
        const auto r = session->step(count);
        if (!r) {
          send_error(res, 409, "conflict", "a step is already in flight for this session");
          return;
        }
        send_json(res, 200, json{{"iterations_run", r->iterations_run},
                                 {"max_delta", r->max_delta},
                                 {"seconds_per_iteration", r->seconds_per_iteration}});
      });
    });

    server.Get(R"(/sessions/([^/]+)/state)", [this](const httplib::Request& req, httplib::Response& res) {
      auto session = session_or_404(req, res);
      if (!session) return;
      guarded(res, [&] {
        StateQuery query;
        query.beliefs_max_cells = config.beliefs_max_cells;
        if (req.has_param("include")) {
          query.predictions = query.beliefs = query.metrics = false;
          std::stringstream parts(req.get_param_value("include"));
          std::string part;
          while (std::getline(parts, part, ',')) {
            if (part == "predictions") {
              query.predictions = true;
            } else if (part == "beliefs") {
              query.beliefs = true;
            } else if (part == "metrics") {
              query.metrics = true;
            } else if (!part.empty()) {
              throw Error(ErrorCode::invalid_argument, fmt::format("unknown include '{}'", part));
            }
          }
        }
        send_json(res, 200, session->state(query));
      });
    });

    server.Get(R"(/sessions/([^/]+)/log)", [this](const httplib::Request& req, httplib::Response& res) {
      auto session = session_or_404(req, res);
      if (!session) return;
      send_json(res, 200, session->log());
    });

    server.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      auto session = session_or_404(req, res);
      if (!session) return;
      std::uint64_t after = 0;
      guarded(res, [&] {
        if (req.has_param("since")) {
          after = std::stoull(req.get_param_value("since"));
        } else if (req.has_header("Last-Event-ID")) {
          after = std::stoull(req.get_header_value("Last-Event-ID"));
        }
      });
      if (res.status >= 400) return;
      const bool follow = req.get_param_value("follow") != "0";
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream", [this, session, after, follow](std::size_t, httplib::DataSink& sink) mutable {
            const auto events = follow ? session->wait_events(after, config.event_poll) : session->events_since(after);
            for (const auto& e : events) {
              const std::string chunk = format_event(e);
              if (!sink.write(chunk.data(), chunk.size())) return false;
              after = e.seq;
            }
            if (!follow || stopping.load() || !registry.find(session->id())) {
              sink.done();
              return true;
            }
            if (events.empty()) {
              static constexpr std::string_view keepalive = ": keepalive\n\n";
              if (!sink.write(keepalive.data(), keepalive.size())) return false;
            }
            return true;
          });
    });

    server.Get(R"(/sessions/([^/]+)/thumbnails/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto session = session_or_404(req, res);
      if (!session) return;
      guarded(res, [&] {
        const auto& dir = session->dataset().thumbnails_dir;
        const std::string stem = req.matches[2].str();
        if (!dir || std::stoull(stem) >= session->num_vertices() || !std::filesystem::is_directory(*dir)) {
          send_error(res, 404, "not_found", "no thumbnail");
          return;
        }
        for (const auto& entry : std::filesystem::directory_iterator(*dir)) {
          if (!entry.is_regular_file() || entry.path().stem().string() != stem) continue;
          std::ifstream in(entry.path(), std::ios::binary);
          std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
          res.set_content(std::move(bytes), content_type_for(entry.path()));
          return;
        }
        send_error(res, 404, "not_found", "no thumbnail");
      });
    });
  }

  ServiceConfig config;
  SessionRegistry registry;
  httplib::Server server;
  std::thread thread;
  std::atomic<bool> stopping{false};
};

HttpService::HttpService(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpService::~HttpService() { stop(); }

int HttpService::bind() {
  if (impl_->config.port == 0) {
    const int port = impl_->server.bind_to_any_port(impl_->config.host);
    if (port > 0) impl_->config.port = port;
    return port > 0 ? port : -1;
  }
  return impl_->server.bind_to_port(impl_->config.host, impl_->config.port) ? impl_->config.port : -1;
}

void HttpService::run() { impl_->server.listen_after_bind(); }

int HttpService::start() {
  const int port = bind();
  if (port < 0) return port;
  impl_->thread = std::thread([this] { run(); });
  impl_->server.wait_until_ready();
  return port;
}

void HttpService::stop() {
  if (impl_->stopping.exchange(true)) return;
  for (const auto& session : impl_->registry.all()) session->notify_all();
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

SessionRegistry& HttpService::registry() noexcept { return impl_->registry; }

const ServiceConfig& HttpService::config() const noexcept { return impl_->config; }

}  // namespace crfrefine
