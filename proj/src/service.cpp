#include "tedi/service.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <sstream>

#include "tedi/error.hpp"

namespace tedi {

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  std::string in(text);
  if (const auto comma = in.find(','); in.rfind("data:", 0) == 0 && comma != std::string::npos) in = in.substr(comma + 1);
  in.erase(std::remove_if(in.begin(), in.end(), [](unsigned char c) { return std::isspace(c); }), in.end());
  if (in.empty() || in.size() % 4 != 0) throw ParseError("invalid base64 payload");
  std::string out(3 * in.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(in.data()), static_cast<int>(in.size()));
  if (n < 0) throw ParseError("invalid base64 payload");
  std::size_t pad = 0;
  if (in.back() == '=') ++pad;
  if (in.size() > 1 && in[in.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

MaskSpec parse_mask(const std::string& text) {
  std::string t = text;
  t.erase(std::remove_if(t.begin(), t.end(), [](unsigned char c) { return std::isspace(c) || c == '[' || c == ']'; }),
          t.end());
  if (t == "auto") return MaskSpec::auto_mask();
  LayerMask m;
  std::stringstream ss(t);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ParseError("bad layer index '" + item + "' in mask \"" + text + "\"");
    if (v < 0) throw ShapeError("negative layer index in mask: " + std::to_string(v));
    m.insert(v);
  }
  return MaskSpec::explicit_mask(m);
}

MaskSpec parse_mask(const nlohmann::json& j) {
  if (j.is_null()) return MaskSpec::auto_mask();
  if (j.is_string()) return parse_mask(j.get<std::string>());
  if (!j.is_array()) throw ParseError("mask must be \"auto\" or a list of layer indices");
  LayerMask m;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw ParseError("mask entries must be integers");
    if (v.get<int>() < 0) throw ShapeError("negative layer index in mask: " + v.dump());
    m.insert(v.get<int>());
  }
  return MaskSpec::explicit_mask(m);
}

nlohmann::json code_json(const StyleW& w) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < w.num_layers(); ++i) rows.push_back(std::vector<double>(w.row(i).begin(), w.row(i).end()));
  return rows;
}

nlohmann::json mask_json(const LayerMask& m) { return m.indices(); }

std::string image_png(const Image& x) { return encode_png(x, PixelRange::signed_unit); }

Image image_from_png(std::string_view bytes) {
  Image x = decode_png(bytes, PixelRange::signed_unit);
  if (x.channels() != 3) throw ShapeError("expected an RGB image, got " + std::to_string(x.channels()) + " channels");
  return x;
}

namespace {

template <class T>
T field(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(std::string("field '") + key + "' has the wrong type");
  }
}

std::string required_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) throw ParseError(std::string("missing string field '") + key + "'");
  return j.at(key).get<std::string>();
}

OptConfig opt_from(const nlohmann::json& j) {
  OptConfig o;
  o.steps = field(j, "steps", o.steps);
  o.lr = field(j, "lr", o.lr);
  o.lambda1 = field(j, "lambda1", o.lambda1);
  o.lambda2 = field(j, "lambda2", o.lambda2);
  if (o.steps < 0) throw ConfigError("steps must be >= 0");
  return o;
}

nlohmann::json trace_json(const std::vector<TraceRow>& trace) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : trace)
    rows.push_back({{"step", r.step},
                    {"total", r.total},
                    {"pixel", r.pixel},
                    {"perceptual", r.perceptual},
                    {"regularizer", r.regularizer}});
  return rows;
}

}  // namespace

nlohmann::json run_generate(const LoadedModels& m, const nlohmann::json& req) {
  const std::string caption = required_string(req, "caption");
  const int n = field(req, "n", 1);
  const auto seed = field<std::uint64_t>(req, "seed", 0);
  const MaskSpec locked = req.contains("locked_mask") ? parse_mask(req.at("locked_mask")) : MaskSpec::auto_mask();
  const Generation g = generate_from_text(m.pipeline(), caption, n, seed, locked);
  nlohmann::json images = nlohmann::json::array(), codes = nlohmann::json::array();
  for (std::size_t i = 0; i < g.images.size(); ++i) {
    images.push_back(base64_encode(image_png(g.images[i])));
    codes.push_back(code_json(g.codes[i]));
  }
  return {{"images", images}, {"codes", codes}, {"locked_mask", mask_json(g.locked)}, {"seed", seed}};
}

nlohmann::json run_invert(const LoadedModels& m, const nlohmann::json& req) {
  const Image x = image_from_png(base64_decode(required_string(req, "image")));
  const bool refine = field(req, "refine", false);
  const Manipulation r = invert(m.pipeline(), x, refine, opt_from(req));
  nlohmann::json out = {{"image", base64_encode(image_png(r.image))}, {"code", code_json(r.code)}};
  if (refine) out["trace"] = trace_json(r.trace);
  return out;
}

nlohmann::json run_manipulate(const LoadedModels& m, const nlohmann::json& req) {
  const Image x = image_from_png(base64_decode(required_string(req, "image")));
  const std::string caption = required_string(req, "caption");
  if (caption.empty()) throw ConfigError("caption must be non-empty");
  const MaskSpec mask = req.contains("mask") ? parse_mask(req.at("mask")) : MaskSpec::auto_mask();
  const bool refine = field(req, "refine", false);
  const Manipulation r = manipulate(m.pipeline(), x, caption, mask, refine, opt_from(req));
  nlohmann::json out = {{"image", base64_encode(image_png(r.image))},
                        {"code", code_json(r.code)},
                        {"applied_mask", mask_json(r.applied)}};
  if (refine) out["trace"] = trace_json(r.trace);
  return out;
}

int http_status(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return dynamic_cast<const nlohmann::json::exception*>(&e) ? 400 : 500;
  const std::string& c = err->code();
  if (c == "model_not_ready") return 503;
  if (c == "lookup_error") return 404;
  if (c == "divergence" || c == "integrity_error") return 500;
  return 400;
}

nlohmann::json error_json(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  return {{"error", e.what()}, {"detail", err ? err->code() : std::string("internal_error")}};
}

Service::Service(LoadedModels models, std::string registry_dir, ServiceConfig cfg)
    : models_(std::move(models)), registry_dir_(std::move(registry_dir)), cfg_(cfg) {}

Service::~Service() {
  drain();
  for (auto& t : workers_)
    if (t.joinable()) t.join();
}

bool Service::needs_job(const nlohmann::json& req) const {
  return field(req, "refine", false) && field(req, "steps", OptConfig{}.steps) > cfg_.job_threshold_steps;
}

std::pair<int, nlohmann::json> Service::submit(const std::string& kind, const nlohmann::json& req) {
  auto job = std::make_shared<Job>();
  job->kind = kind;
  job->request = req;
  job->session = field<std::string>(req, "session", "default");
  std::lock_guard<std::mutex> lock(mu_);
  job->id = "job-" + std::to_string(next_id_++);
  jobs_[job->id] = job;
  Session& s = sessions_[job->session];
  s.queue.push_back(job);
  if (!s.running) {
    s.running = true;
    ++active_;
    workers_.emplace_back([this, session = job->session] { run_session(session); });
  }
  return {202, {{"job_id", job->id}, {"status", job->status}, {"session", job->session}}};
}

void Service::run_session(const std::string& session) {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::lock_guard<std::mutex> lock(mu_);
      Session& s = sessions_[session];
      if (s.queue.empty()) {
        s.running = false;
        --active_;
        idle_.notify_all();
        return;
      }
      job = s.queue.front();
      s.queue.pop_front();
      job->status = "running";
    }
    nlohmann::json result;
    std::string status = "done";
    try {
      result = job->kind == "invert" ? run_invert(models_, job->request) : run_manipulate(models_, job->request);
    } catch (const std::exception& e) {
      status = "failed";
      result = error_json(e);
    }
    std::lock_guard<std::mutex> lock(mu_);
    job->result = std::move(result);
    job->status = status;
  }
}

void Service::drain() {
  std::unique_lock<std::mutex> lock(mu_);
  idle_.wait(lock, [this] { return active_ == 0; });
}

std::pair<int, nlohmann::json> Service::handle(const std::string& method, const std::string& path,
                                               const std::string& body) {
  try {
    if (method == "GET" && path == "/api/models") {
      nlohmann::json loaded = nlohmann::json::object();
      if (models_.generator)
        loaded["generator"] = {{"resolution", models_.generator->resolution()},
                               {"num_layers", models_.generator->num_layers()},
                               {"style_dim", models_.generator->style_dim()}};
      return {200, {{"registry", registry_dir_}, {"models", models_.manifest.at("models")}, {"loaded", loaded}}};
    }
    if (method == "GET" && path == "/api/layers") {
      if (!models_.layer_map) throw ModelNotReady("registry has no attribute layer map");
      return {200, models_.layer_map->to_json()};
    }
    if (method == "GET" && path.rfind("/api/jobs/", 0) == 0) {
      const std::string id = path.substr(10);
      std::lock_guard<std::mutex> lock(mu_);
      auto it = jobs_.find(id);
      if (it == jobs_.end()) throw LookupError("no job '" + id + "'");
      nlohmann::json out = {{"job_id", id}, {"status", it->second->status}, {"session", it->second->session}};
      if (it->second->status == "done") out["result"] = it->second->result;
      if (it->second->status == "failed") out["error"] = it->second->result;
      return {200, out};
    }
    if (method == "POST") {
      nlohmann::json req;
      try {
        req = body.empty() ? nlohmann::json::object() : nlohmann::json::parse(body);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("request body is not JSON: ") + e.what());
      }
      if (!req.is_object()) throw ParseError("request body must be a JSON object");
      if (path == "/api/generate") return {200, run_generate(models_, req)};
      if (path == "/api/invert") return needs_job(req) ? submit("invert", req) : std::pair{200, run_invert(models_, req)};
      if (path == "/api/manipulate")
        return needs_job(req) ? submit("manipulate", req) : std::pair{200, run_manipulate(models_, req)};
    }
    return {404, {{"error", "no route " + method + " " + path}, {"detail", "not_found"}}};
  } catch (const std::exception& e) {
    return {http_status(e), error_json(e)};
  }
}

void Service::mount(httplib::Server& server) {
  auto reply = [this](const httplib::Request& req, httplib::Response& res) {
    auto [status, body] = handle(req.method, req.path, req.body);
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  server.Get("/api/models", reply);
  server.Get("/api/layers", reply);
  server.Get(R"(/api/jobs/([A-Za-z0-9\-]+))", reply);
  server.Post("/api/generate", reply);
  server.Post("/api/invert", reply);
  server.Post("/api/manipulate", reply);
}

}  // namespace tedi
