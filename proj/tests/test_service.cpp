#include <httplib.h>

#include <filesystem>
#include <random>
#include <thread>

#include "doctest.h"
#include "tedi/error.hpp"
#include "tedi/service.hpp"

using namespace tedi;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tedi_test_service_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Tiny untrained models in a registry.
fs::path toy_registry(const std::string& name) {
  const fs::path dir = scratch(name);
  GeneratorConfig gc;
  gc.style_dim = 6;
  gc.channels = 4;
  gc.disc_channels = 2;
  gc.mapping_layers = 2;
  GeneratorModel g(gc, 1);
  g.to_checkpoint().save(dir / "g.tedi");
  EncoderConfig ec;
  ec.style_dim = 6;
  ec.channels = 3;
  ec.hidden = 6;
  encoder_checkpoint(EncoderModel(ec, 2), nullptr, g.to_checkpoint().hash()).save(dir / "e.tedi");
  const std::vector<std::string> texts{"a smiling woman with black hair", "he is old and has a beard"};
  TextEncoderModel t(Vocabulary::build(texts), {8, 8, 6}, 3);
  t.to_checkpoint().save(dir / "t.tedi");
  write_file(dir / "t.vocab", t.vocab().to_text());
  AttributeLayerMap map(6);
  map.set("hair color", {2});
  map.set("smile", {4});
  map.save(dir / "map.json");

  Registry r(dir / "registry");
  r.add("generator", dir / "g.tedi");
  r.add("image_encoder", dir / "e.tedi");
  r.add("text_encoder", dir / "t.tedi", dir / "t.vocab");
  r.add("layer_map", dir / "map.json");
  return dir / "registry";
}

std::string face_b64(std::uint64_t seed) {
  return base64_encode(image_png(data::generate_samples(1, 16, seed)[0].image));
}

json body(const std::pair<int, json>& r) { return r.second; }

}  // namespace

TEST_CASE("base64 matches an independent encoder") {
  std::mt19937 rng(3);
  for (int len = 0; len < 64; ++len) {
    std::string s(static_cast<std::size_t>(len), '\0');
    for (char& c : s) c = static_cast<char>(rng() & 0xff);
    CHECK(base64_encode(s) == httplib::detail::base64_encode(s));
    if (len > 0) CHECK(base64_decode(base64_encode(s)) == s);
  }
  CHECK(base64_decode("data:image/png;base64,aGk=") == "hi");
  CHECK_THROWS_AS(base64_decode("abc"), ParseError);
}

TEST_CASE("mask parsing") {
  CHECK(parse_mask(std::string("auto")).automatic);
  CHECK(parse_mask(std::string("1,3")).layers == LayerMask({1, 3}));
  CHECK(parse_mask(std::string("[2, 0]")).layers == LayerMask({0, 2}));
  CHECK(parse_mask(std::string("")).layers.empty());
  CHECK_FALSE(parse_mask(std::string("")).automatic);
  CHECK(parse_mask(json::array({4})).layers == LayerMask({4}));
  CHECK_THROWS_AS(parse_mask(std::string("1,x")), ParseError);
  CHECK_THROWS_AS(parse_mask(json::array({-1})), ShapeError);
  CHECK_THROWS_AS(parse_mask(json{{"a", 1}}), ParseError);
}

TEST_CASE("registry verifies hashes") {
  const fs::path reg = toy_registry("integrity");
  const Registry r(reg);
  CHECK(r.has("generator"));
  CHECK_FALSE(r.has("classifier"));
  CHECK(r.manifest().at("models").at("text_encoder").contains("vocab_sha256"));
  CHECK_NOTHROW(LoadedModels::load(r));
  std::string bytes = read_file(reg / "generator.tedi");
  bytes[bytes.size() / 2] ^= 1;
  write_file(reg / "generator.tedi", bytes);
  CHECK_THROWS_AS(LoadedModels::load(Registry(reg)), IntegrityError);
  CHECK_THROWS_AS(Registry(reg).read("classifier"), ModelNotReady);
  CHECK_THROWS_AS(Registry(reg).read("wings"), LookupError);
}

TEST_CASE("endpoint contracts") {
  const fs::path reg = toy_registry("endpoints");
  Service s(LoadedModels::load(Registry(reg)), reg.string());

  auto models = s.handle("GET", "/api/models", "");
  CHECK(models.first == 200);
  CHECK(models.second.at("models").contains("generator"));
  CHECK(models.second.at("loaded").at("generator").at("num_layers") == 6);

  auto layers = s.handle("GET", "/api/layers", "");
  CHECK(layers.first == 200);
  CHECK(layers.second.at("attributes").at("hair color") == json::array({2}));

  auto zero = s.handle("POST", "/api/generate", json{{"caption", "black hair"}, {"n", 0}}.dump());
  CHECK(zero.first == 400);
  CHECK(zero.second.at("error") == "n must be ≥ 1");
  CHECK(zero.second.contains("detail"));

  auto gen = s.handle("POST", "/api/generate", json{{"caption", "a smiling woman with black hair"}, {"n", 3}, {"seed", 4}}.dump());
  REQUIRE(gen.first == 200);
  CHECK(gen.second.at("images").size() == 3);
  CHECK(gen.second.at("locked_mask") == json::array({2, 4}));
  CHECK(gen.second == s.handle("POST", "/api/generate", json{{"caption", "a smiling woman with black hair"}, {"n", 3}, {"seed", 4}}.dump()).second);

  const std::string src = face_b64(7);
  auto inv = s.handle("POST", "/api/invert", json{{"image", src}}.dump());
  REQUIRE(inv.first == 200);
  auto empty = s.handle("POST", "/api/manipulate", json{{"image", src}, {"caption", "black hair"}, {"mask", json::array()}}.dump());
  REQUIRE(empty.first == 200);
  CHECK(empty.second.at("image") == inv.second.at("image"));
  CHECK(empty.second.at("applied_mask") == json::array());

  auto autom = s.handle("POST", "/api/manipulate", json{{"image", src}, {"caption", "black hair"}, {"mask", "auto"}}.dump());
  CHECK(autom.second.at("applied_mask") == json::array({2}));

  CHECK(s.handle("POST", "/api/manipulate", json{{"image", src}, {"caption", "a woman"}}.dump()).first == 400);
  CHECK(s.handle("POST", "/api/manipulate", json{{"image", src}, {"caption", "black hair"}, {"mask", json::array({9})}}.dump()).first == 400);
  CHECK(s.handle("POST", "/api/invert", "{not json").first == 400);
  CHECK(s.handle("POST", "/api/invert", json{{"image", "!!!!"}}.dump()).first == 400);
  CHECK(s.handle("GET", "/api/nothing", "").first == 404);
  CHECK(s.handle("GET", "/api/jobs/job-99", "").first == 404);
}

TEST_CASE("long refinements run as queued jobs") {
  const fs::path reg = toy_registry("jobs");
  Service s(LoadedModels::load(Registry(reg)), reg.string(), ServiceConfig{5});
  const json req = {{"image", face_b64(3)}, {"caption", "black hair"}, {"refine", true}, {"steps", 8}, {"session", "a"}};
  std::vector<std::string> ids;
  for (int k = 0; k < 3; ++k) {
    auto r = s.handle("POST", "/api/manipulate", req.dump());
    REQUIRE(r.first == 202);
    ids.push_back(r.second.at("job_id"));
  }
  auto other = s.handle("POST", "/api/invert", json{{"image", face_b64(3)}, {"refine", true}, {"steps", 8}, {"session", "b"}}.dump());
  REQUIRE(other.first == 202);
  s.drain();
  Service sync(LoadedModels::load(Registry(reg)), reg.string(), ServiceConfig{1000});
  const json direct = body(sync.handle("POST", "/api/manipulate", req.dump()));
  for (const auto& id : ids) {
    auto j = s.handle("GET", "/api/jobs/" + id, "");
    CHECK(j.second.at("status") == "done");
    CHECK(j.second.at("result") == direct);
  }
  CHECK(direct.at("trace").size() > 0);
  auto failing = s.handle("POST", "/api/manipulate", json{{"image", face_b64(3)}, {"caption", "a woman"}, {"refine", true}, {"steps", 8}}.dump());
  s.drain();
  auto f = s.handle("GET", "/api/jobs/" + failing.second.at("job_id").get<std::string>(), "");
  CHECK(f.second.at("status") == "failed");
  CHECK(f.second.at("error").at("detail") == "no_attribute");
}

TEST_CASE("quoted 14-layer map through the API") {
  const fs::path dir = scratch("layers14");
  Registry r(dir);
  r.add("layer_map", TEDI_MAPS_DIR "/stylegan14.json");
  Service s(LoadedModels::load(Registry(dir)), dir.string());
  auto layers = s.handle("GET", "/api/layers", "");
  REQUIRE(layers.first == 200);
  CHECK(layers.second.at("num_layers") == 14);
  CHECK(layers.second.at("attributes").at("hair color") == json::array({7}));
  CHECK(s.handle("POST", "/api/generate", json{{"caption", "black hair"}}.dump()).first == 503);
}

TEST_CASE("http round trip") {
  const fs::path reg = toy_registry("http");
  Service s(LoadedModels::load(Registry(reg)), reg.string());
  httplib::Server server;
  s.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  auto res = client.Post("/api/generate", json{{"caption", "black hair"}, {"n", 0}}.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  CHECK(json::parse(res->body).at("error") == "n must be ≥ 1");
  auto layers = client.Get("/api/layers");
  REQUIRE(layers);
  CHECK(layers->status == 200);
  const json req = {{"image", face_b64(2)}};
  auto inv = client.Post("/api/invert", req.dump(), "application/json");
  REQUIRE(inv);
  CHECK(json::parse(inv->body) == s.handle("POST", "/api/invert", req.dump()).second);
  server.stop();
  t.join();
}
