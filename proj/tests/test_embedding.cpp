#include <doctest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "toolwatch/embedding.hpp"
#include "toolwatch/error.hpp"

#include <httplib.h>

using namespace toolwatch;
using nlohmann::json;

namespace {

double norm(const EmbeddingVector& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Deterministic backend that counts how many texts reach it.
class CountingBackend : public EmbeddingProvider {
 public:
  explicit CountingBackend(std::size_t dim = 8) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  const std::string& model_id() const override { return id_; }
  std::size_t calls = 0;
  std::size_t texts_seen = 0;
  bool emit_nan = false;
  std::size_t short_by = 0;

 protected:
  std::vector<EmbeddingVector> compute(std::span<const std::string> texts) override {
    ++calls;
    texts_seen += texts.size();
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) {
      auto v = embed_deterministic(t, dim_ - short_by);
      if (emit_nan) v[0] = std::nan("");
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  std::size_t dim_;
  std::string id_ = "counting";
};

}  // namespace

TEST_CASE("deterministic embedder matches frozen reference values") {
  // Computed once with an independent Python implementation of the hashing rule.
  auto x = embed_deterministic("x", 384);
  for (std::size_t i = 0; i < 384; ++i) CHECK(x[i] == (i == 142 ? 1.0 : 0.0));
  auto y = embed_deterministic("y", 384);
  CHECK(y[111] == 1.0);
  CHECK(x != y);
  auto e = embed_deterministic("", 384);
  CHECK(e[27] == -1.0);
  auto r = embed_deterministic("read file_12345 ok", 384);
  CHECK(r[273] == doctest::Approx(0.5773502691896258).epsilon(1e-15));
  CHECK(r[294] == doctest::Approx(-0.5773502691896258).epsilon(1e-15));
  CHECK(r[344] == doctest::Approx(0.5773502691896258).epsilon(1e-15));
  CHECK(fnv1a64("abc") == 16654208175385433931ULL);
  CHECK(splitmix64_mix(12345) == 17540659726606785873ULL);
}

TEST_CASE("deterministic embedder basics") {
  CHECK(embed_deterministic("x", 384) == embed_deterministic("x", 384));
  for (const char* t : {"x", "", "a b c d e", "same same"}) CHECK(norm(embed_deterministic(t, 384)) == doctest::Approx(1.0).epsilon(1e-6));

  DeterministicEmbedder emb;
  const std::vector<std::string> blanks{"", ""};
  auto out = emb.embed(blanks);
  CHECK(out[0] == out[1]);

  const std::vector<std::string> ab{"a", "b"};
  auto v = emb.embed(ab);
  REQUIRE(v.size() == 2);
  CHECK(v[0].size() == 384);
  CHECK(v[1].size() == 384);

  std::string long_text;
  for (int i = 0; i < 2000; ++i) long_text += "word ";
  long_text.resize(10000, 'z');
  CHECK(emb.embed_one(long_text) == emb.embed_one(long_text.substr(0, 512)));
}

TEST_CASE("cache avoids repeat backend work") {
  const auto dir = twtest::scratch_dir("embed-cache");
  const auto path = dir / "cache.jsonl";
  auto backend = std::make_shared<CountingBackend>();
  const std::vector<std::string> texts{"alpha", "beta", "alpha"};
  EmbeddingVector first_alpha;
  {
    CachedEmbedder cache(backend, path);
    auto v = cache.embed(texts);
    first_alpha = v[0];
    CHECK(backend->texts_seen == 2);
    CHECK(v[0] == v[2]);
    const std::size_t before = backend->calls;
    cache.embed(texts);
    CHECK(backend->calls == before);
  }
  {
    // a fresh instance reads the file
    CachedEmbedder cache(backend, path);
    CHECK(cache.size() == 2);
    const std::size_t before = backend->calls;
    cache.embed(texts);
    CHECK(backend->calls == before);
  }
  std::filesystem::remove(path);
  {
    CachedEmbedder cache(backend, path);
    const std::size_t before = backend->calls;
    auto v = cache.embed(texts);
    CHECK(backend->calls == before + 1);
    CHECK(v[0] == first_alpha);
  }
}

TEST_CASE("texts equal after truncation share one cache entry") {
  auto backend = std::make_shared<CountingBackend>();
  CachedEmbedder cache(backend, std::nullopt);
  const std::string base(512, 'k');
  const std::vector<std::string> texts{base + "tail one", base + "another tail"};
  auto v = cache.embed(texts);
  CHECK(cache.size() == 1);
  CHECK(v[0] == v[1]);
}

TEST_CASE("corrupt cache lines are skipped with a warning") {
  const auto dir = twtest::scratch_dir("embed-corrupt");
  const auto path = dir / "cache.jsonl";
  auto backend = std::make_shared<CountingBackend>();
  {
    CachedEmbedder cache(backend, path);
    const std::vector<std::string> t{"good"};
    cache.embed(t);
  }
  {
    std::ofstream out(path, std::ios::app);
    out << "{broken\n" << R"({"key":"abc","dim":8,"values":[1,2]})" << "\n";
  }
  std::vector<std::string> warnings;
  CachedEmbedder cache(backend, path, [&](const std::string& w) { warnings.push_back(w); });
  CHECK(cache.skipped_entries() == 2);
  CHECK(warnings.size() == 2);
  CHECK(cache.size() == 1);
}

TEST_CASE("backend output is checked") {
  auto nan_backend = std::make_shared<CountingBackend>();
  nan_backend->emit_nan = true;
  const std::vector<std::string> t{"x"};
  CHECK_THROWS_AS(nan_backend->embed(t), IntegrityError);
  auto short_backend = std::make_shared<CountingBackend>();
  short_backend->short_by = 1;
  CHECK_THROWS_AS(short_backend->embed(t), IntegrityError);
}

TEST_CASE("provider config") {
  ProviderConfig c;
  c.backend = ProviderConfig::Backend::remote_service;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.endpoint = "http://localhost:1/embed";
  c.validate();
  json j = c;
  CHECK(j.get<ProviderConfig>() == c);
  CHECK_THROWS_AS(json::parse(R"({"backend":"gpu"})").get<ProviderConfig>(), ConfigError);
  CHECK_THROWS_AS(RemoteEmbedder("https://example.com/embed", "m", 4), ConfigError);
  auto p = make_provider(ProviderConfig{});
  CHECK(p->dim() == 384);
  CHECK(p->model_id() == "deterministic-token-hash-v1");
}

TEST_CASE("remote embedder against a local server") {
  httplib::Server server;
  std::atomic<int> requests{0};
  std::atomic<int> fail_first{1};
  server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    ++requests;
    if (fail_first-- > 0) {
      res.status = 503;
      return;
    }
    const json body = json::parse(req.body);
    json rows = json::array();
    for (const auto& t : body.at("texts")) rows.push_back(embed_deterministic(t.get<std::string>(), 4));
    res.set_content(json{{"embeddings", rows}}.dump(), "application/json");
  });
  server.Post("/bad", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"embeddings":[[1,2]]})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  RemoteEmbedder remote(base + "/embed", "m", 4, /*batch_size=*/2, /*retries=*/2);
  const std::vector<std::string> texts{"a", "b", "c"};
  auto v = remote.embed(texts);
  REQUIRE(v.size() == 3);
  CHECK(v[2] == embed_deterministic("c", 4));
  CHECK(requests == 3);  // one 503 retry, then two batches

  RemoteEmbedder bad(base + "/bad", "m", 4, 8, 0);
  CHECK_THROWS_AS(bad.embed(texts), IntegrityError);

  server.stop();
  th.join();

  RemoteEmbedder down(base + "/embed", "m", 4, 8, 1);
  CHECK_THROWS_AS(down.embed(texts), TransportError);
}
