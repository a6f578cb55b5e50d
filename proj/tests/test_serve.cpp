#include <doctest.h>

#include <functional>
#include <set>
#include <thread>

#include "flare/serve.hpp"
#include "flare/synth.hpp"
#include "schema_check.hpp"

// After Eigen: resolv.h, pulled in here, defines a _res macro.
#include <httplib.h>

using namespace flare;

namespace {

std::shared_ptr<const ServiceSnapshot> make_snapshot(bool with_model, FusionMode fusion = FusionMode::TextIdCritique) {
  SynthSpec spec;
  spec.structure = SynthStructure::Category;
  spec.n_items = 48;
  spec.n_users = 40;
  auto bundle = make_synthetic_corpus(spec);
  bundle.vocab.mutable_at(3).title = "Red Stapler";
  bundle.vocab.mutable_at(7).title = "stapler refill";
  if (!with_model) return std::make_shared<const ServiceSnapshot>(bundle.vocab, std::nullopt, TextResources{}, "");
  ModelConfig cfg;
  cfg.n_items = bundle.vocab.size();
  cfg.transformer = {1, 2, 16, 32, 16};
  cfg.perceiver = {2, 2, 1, 16, 0};
  cfg.d_text = 8;
  cfg.fusion = fusion;
  cfg.init_std = 0.3;
  TextConfig text;
  auto res = make_text_resources(text, cfg.d_text, bundle.vocab);
  return std::make_shared<const ServiceSnapshot>(bundle.vocab, FlareModel<float>(cfg, 1), std::move(res), "abc123");
}

nlohmann::json req(std::vector<std::string> history, std::optional<std::string> critique = std::nullopt,
                   std::optional<int> k = std::nullopt) {
  nlohmann::json j = {{"history", history}};
  if (critique) j["critique"] = *critique;
  if (k) j["k"] = *k;
  return j;
}

}  // namespace

TEST_CASE("recommend returns k items in descending score with overlap counts") {
  const FlareService svc(make_snapshot(true));
  const auto snap = svc.snapshot();
  const auto critique = join_categories(snap->vocab.at(20).categories);
  const auto r = svc.recommend(req({"S000000", "S000005"}, critique, 7).dump());
  REQUIRE(r.status == 200);
  const auto& items = r.body.at("items");
  CHECK(items.size() == 7);
  for (std::size_t i = 1; i < items.size(); ++i) CHECK(items[i - 1].at("score") >= items[i].at("score"));
  const auto levels = split_critique(critique);
  for (const auto& it : items) {
    const auto idx = *snap->vocab.find(it.at("item_id").get<std::string>());
    CHECK(it.at("overlap") == category_overlap(snap->vocab.at(idx).categories, levels));
  }
  CHECK(r.body.at("fingerprint").at("checkpoint") == "abc123");
  CHECK(svc.recommend(req({"S000000", "S000005"}, critique, 7).dump()).body == r.body);
}

TEST_CASE("missing critique equals plain next-item prediction") {
  const FlareService svc(make_snapshot(true));
  const auto snap = svc.snapshot();
  const auto plain = svc.recommend(req({"S000001"}).dump());
  REQUIRE(plain.status == 200);
  CHECK(plain.body.at("items").size() == 10);
  const std::vector<ItemIndex> history = {1};
  const auto direct = predict_topk(*snap->model, std::span<const ItemIndex>(history), std::nullopt, 10,
                                   FusionMode::TextIdCritique, snap->text.context());
  for (std::size_t i = 0; i < direct.size(); ++i) {
    CHECK(plain.body.at("items")[i].at("item_id") == snap->vocab.at(direct[i].item).item_id);
    CHECK(plain.body.at("items")[i].at("overlap") == 0);
  }
  nlohmann::json with_null = req({"S000001"});
  with_null["critique"] = nullptr;
  CHECK(svc.recommend(with_null.dump()).body == plain.body);
  CHECK(svc.recommend(req({"S000001"}, "").dump()).body == plain.body);
}

TEST_CASE("recommend validation errors") {
  const FlareService svc(make_snapshot(true));
  const auto unknown = svc.recommend(req({"S000001", "NOPE"}).dump());
  CHECK(unknown.status == 400);
  CHECK(unknown.body.at("item_id") == "NOPE");
  CHECK(svc.recommend(req({}).dump()).status == 400);
  CHECK(svc.recommend(req({"S000001"}, std::nullopt, 0).dump()).status == 400);
  CHECK(svc.recommend(req({"S000001"}, std::nullopt, 101).dump()).status == 400);
  CHECK(svc.recommend(req({"S000001"}, std::nullopt, 100).dump()).status == 200);
  CHECK(svc.recommend("{not json").status == 400);
  CHECK(svc.recommend(R"({"history":["S000001"],"extra":1})").status == 400);
  CHECK(svc.recommend(R"({"history":[1]})").status == 400);
}

TEST_CASE("no model gives 503 while the catalog stays available") {
  FlareService svc(make_snapshot(false));
  CHECK(svc.recommend(req({"S000001"}).dump()).status == 503);
  CHECK(svc.item("S000003").status == 200);
  CHECK(svc.health().body.at("status") == "no_model");
  svc.swap(make_snapshot(true));
  CHECK(svc.recommend(req({"S000001"}).dump()).status == 200);
  CHECK(svc.health().body.at("status") == "ok");
  CHECK(svc.health().body.at("checkpoint") == "abc123");
  CHECK(FlareService().health().body.at("status") == "no_catalog");
}

TEST_CASE("catalog endpoints") {
  const FlareService svc(make_snapshot(false));
  const auto item = svc.item("S000003");
  CHECK(item.body.at("title") == "Red Stapler");
  CHECK(svc.item("missing").status == 404);

  const auto hits = svc.search("STAPLER", 0, 20);
  CHECK(hits.body.at("total") == 2);
  CHECK(hits.body.at("items")[0].at("item_id") == "S000003");
  const auto page = svc.search("product", 10, 5);
  CHECK(page.body.at("items").size() == 5);
  CHECK(page.body.at("items")[0].at("item_id") == "S000012");
  CHECK(svc.search("x", 0, 0).status == 400);

  const auto cats = svc.categories();
  std::set<std::vector<std::string>> prefixes;
  for (const auto& it : svc.snapshot()->vocab.items()) {
    for (std::size_t d = 1; d <= it.categories.size(); ++d) {
      prefixes.insert({it.categories.begin(), it.categories.begin() + static_cast<std::ptrdiff_t>(d)});
    }
  }
  CHECK(cats.body.at("node_count") == prefixes.size());
  std::function<std::size_t(const nlohmann::json&)> count = [&](const nlohmann::json& nodes) {
    std::size_t n = 0;
    for (const auto& node : nodes) n += 1 + count(node.at("children"));
    return n;
  };
  CHECK(count(cats.body.at("tree")) == prefixes.size());
}

TEST_CASE("http routes, CORS and concurrent identical requests") {
  const FlareService svc(make_snapshot(true));
  httplib::Server server;
  svc.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const auto health = client.Get("/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(client.Get("/v1/items/S000003")->status == 200);
  CHECK(client.Get("/v1/items/unknown")->status == 404);
  CHECK(nlohmann::json::parse(client.Get("/v1/items?q=stapler")->body).at("total") == 2);
  CHECK(client.Get("/v1/items?q=a&limit=abc")->status == 400);
  CHECK(client.Get("/v1/categories")->status == 200);
  CHECK(client.Options("/v1/recommend")->status == 204);

  const auto body = req({"S000000", "S000004"}, "c1 - c1a0").dump();
  std::vector<std::string> bodies(4);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    threads.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      const auto r = c.Post("/v1/recommend", body, "application/json");
      if (r && r->status == 200) bodies[i] = r->body;
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& b : bodies) CHECK(b == bodies[0]);
  CHECK(!bodies[0].empty());
  CHECK(client.Post("/v1/recommend", req({"bogus"}).dump(), "application/json")->status == 400);

  server.stop();
  worker.join();
}

TEST_CASE("responses conform to the published schemas") {
  SchemaChecker schemas;
  auto conforms = [&](const std::string& file, const nlohmann::json& body) {
    const auto errors = schemas.check(file, body);
    for (const auto& e : errors) MESSAGE(file << " " << e);
    return errors.empty();
  };
  const FlareService svc(make_snapshot(true));
  const auto critique = join_categories(svc.snapshot()->vocab.at(20).categories);
  const auto request = req({"S000000", "S000005"}, critique, 5);
  CHECK(conforms("recommend_request.schema.json", request));
  CHECK(conforms("recommend_response.schema.json", svc.recommend(request.dump()).body));
  CHECK(conforms("recommend_response.schema.json", svc.recommend(req({"S000001"}).dump()).body));
  CHECK(conforms("item.schema.json", svc.item("S000003").body));
  CHECK(conforms("items_search.schema.json", svc.search("product", 0, 3).body));
  CHECK(conforms("categories.schema.json", svc.categories().body));
  CHECK(conforms("health.schema.json", svc.health().body));
  CHECK(conforms("health.schema.json", FlareService().health().body));
  CHECK(conforms("error.schema.json", svc.recommend(req({"NOPE"}).dump()).body));
  CHECK(conforms("error.schema.json", svc.item("missing").body));

  CHECK_FALSE(conforms("recommend_request.schema.json", nlohmann::json{{"history", {"a"}}, {"k", 0}}));
  CHECK_FALSE(conforms("health.schema.json", nlohmann::json{{"status", "ok"}, {"items", 1}}));
}
