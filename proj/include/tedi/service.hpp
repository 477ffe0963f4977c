#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "tedi/registry.hpp"

namespace httplib {
class Server;
}

namespace tedi {

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// "auto", or zero-based layer indices as "1,3" / "[1,3]" / JSON array.
MaskSpec parse_mask(const std::string& text);
MaskSpec parse_mask(const nlohmann::json& j);
nlohmann::json code_json(const StyleW& w);
nlohmann::json mask_json(const LayerMask& m);

/// PNG bytes of a generator output. Shared by CLI and HTTP so both emit the
/// same bytes.
std::string image_png(const Image& x);
/// RGB PNG into [-1, 1].
Image image_from_png(std::string_view bytes);

/// Request bodies, as JSON, for the pipeline endpoints.
nlohmann::json run_generate(const LoadedModels& m, const nlohmann::json& request);
nlohmann::json run_invert(const LoadedModels& m, const nlohmann::json& request);
nlohmann::json run_manipulate(const LoadedModels& m, const nlohmann::json& request);

/// HTTP status for an exception thrown by the library.
int http_status(const std::exception& e);
nlohmann::json error_json(const std::exception& e);

struct ServiceConfig {
  /// Refinements longer than this run as background jobs.
  int job_threshold_steps = 20;
};

/// Routes of the HTTP API over a read-only model set.
class Service {
public:
  Service(LoadedModels models, std::string registry_dir, ServiceConfig cfg = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void mount(httplib::Server& server);

  /// Endpoint bodies, also callable without a socket. Returns {status, body}.
  std::pair<int, nlohmann::json> handle(const std::string& method, const std::string& path, const std::string& body);

  /// Blocks until every queued job has finished.
  void drain();

private:
  struct Job {
    std::string id, session, kind;
    nlohmann::json request;
    std::string status = "queued";
    nlohmann::json result;
  };
  struct Session {
    std::deque<std::shared_ptr<Job>> queue;
    bool running = false;
  };

  std::pair<int, nlohmann::json> submit(const std::string& kind, const nlohmann::json& request);
  void run_session(const std::string& session);
  bool needs_job(const nlohmann::json& request) const;

  LoadedModels models_;
  std::string registry_dir_;
  ServiceConfig cfg_;
  std::mutex mu_;
  std::condition_variable idle_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::map<std::string, Session> sessions_;
  std::vector<std::thread> workers_;
  int active_ = 0;
  std::uint64_t next_id_ = 1;
};

}  // namespace tedi
