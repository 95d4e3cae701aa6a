// HTTP front end: GET /health, GET /model/info, POST /infer.
#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

// Must precede httplib.h: <resolv.h> defines _res.
#include "urbanwind/service.hpp"

#include <httplib.h>

namespace urbanwind {

class InferenceServer {
 public:
  InferenceServer() { routes(); }
  ~InferenceServer() { stop(); }
  InferenceServer(const InferenceServer&) = delete;
  InferenceServer& operator=(const InferenceServer&) = delete;

  /// Makes the service ready. Until then every endpoint answers 503.
  void set_engine(std::shared_ptr<const InferenceEngine> engine) { std::atomic_store(&engine_, std::move(engine)); }

  /// Loads the checkpoint on a background thread.
  void load_async(const std::string& checkpoint_path) {
    loader_ = std::jthread([this, checkpoint_path] {
      try {
        set_engine(InferenceEngine::from_file(checkpoint_path));
      } catch (const std::exception& e) {
        std::lock_guard lock(mutex_);
        load_error_ = e.what();
      }
    });
  }

  /// Binds `host:port` (port 0 picks a free one) and serves on a thread.
  int start(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::jthread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
    if (loader_.joinable()) loader_.join();
  }

  void wait() {
    if (thread_.joinable()) thread_.join();
  }

 private:
  std::shared_ptr<const InferenceEngine> engine() const { return std::atomic_load(&engine_); }

  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  bool unavailable(httplib::Response& res) {
    if (engine()) return false;
    std::lock_guard lock(mutex_);
    send_json(res, 503, error_body(503, "", load_error_.empty() ? "model is loading" : "model failed to load: " + load_error_));
    return true;
  }

  void routes() {
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      if (unavailable(res)) return;
      send_json(res, 200, {{"status", "ok"}, {"checkpoint_id", engine()->checkpoint_id()}});
    });
    server_.Get("/model/info", [this](const httplib::Request&, httplib::Response& res) {
      if (unavailable(res)) return;
      send_json(res, 200, engine()->info());
    });
    server_.Post("/infer", [this](const httplib::Request& req, httplib::Response& res) {
      if (unavailable(res)) return;
      const auto eng = engine();
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception& e) {
        send_json(res, 400, error_body(400, "", std::string("malformed JSON: ") + e.what()));
        return;
      }
      try {
        const InferenceRequest r = parse_request(body);
        send_json(res, 200, eng->respond(eng->infer(r)));
      } catch (const RequestError& e) {
        send_json(res, e.status(), error_body(e.status(), e.field(), e.what()));
      } catch (const GeometryError& e) {
        send_json(res, 422, error_body(422, "scene", e.what()));
      } catch (const std::exception& e) {
        send_json(res, 500, error_body(500, "", e.what()));
      }
    });
  }

  httplib::Server server_;
  std::shared_ptr<const InferenceEngine> engine_;
  std::mutex mutex_;
  std::string load_error_;
  std::jthread thread_;
  std::jthread loader_;
};

}  // namespace urbanwind
