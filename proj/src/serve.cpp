#include "flare/serve.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include <httplib.h>

#include "flare/bundle.hpp"
#include "flare/checkpoint.hpp"
#include "flare/hash.hpp"

namespace flare {

namespace {

HttpResponse error(int status, std::string message, std::optional<std::string> field = std::nullopt) {
  nlohmann::json body = {{"error", std::move(message)}};
  if (field) body["field"] = *field;
  return {status, std::move(body)};
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

nlohmann::json tree_json(const std::vector<CategoryIndex::Node>& nodes) {
  auto out = nlohmann::json::array();
  for (const auto& n : nodes) {
    out.push_back({{"name", n.name}, {"path", n.path}, {"items", n.items}, {"children", tree_json(n.children)}});
  }
  return out;
}

}  // namespace

ServiceSnapshot::ServiceSnapshot(ItemVocab v, std::optional<FlareModel<float>> m, TextResources t, std::string hash)
    : vocab(std::move(v)), categories(vocab), model(std::move(m)), text(std::move(t)), checkpoint_hash(std::move(hash)) {
  if (model && model->n_items() != vocab.size()) {
    throw std::invalid_argument("service snapshot: checkpoint has " + std::to_string(model->n_items()) +
                                " items but the catalog has " + std::to_string(vocab.size()));
  }
  fingerprint = {{"checkpoint", checkpoint_hash.empty() ? nlohmann::json(nullptr) : nlohmann::json(checkpoint_hash)},
                 {"text", text.fingerprint()}};
  if (model) {
    fingerprint["fusion"] = std::string(to_string(model->config().fusion));
    fingerprint["model_config"] = sha256_hex(model->config().to_json().dump());
  }
}

std::shared_ptr<const ServiceSnapshot> load_snapshot(const std::filesystem::path& bundle_path,
                                                     const std::optional<std::filesystem::path>& checkpoint) {
  auto bundle = load_bundle(bundle_path);
  if (!checkpoint) return std::make_shared<const ServiceSnapshot>(std::move(bundle.vocab), std::nullopt, TextResources{}, "");
  auto trained = load_trained(*checkpoint, bundle.vocab);
  return std::make_shared<const ServiceSnapshot>(std::move(bundle.vocab), std::move(trained.model),
                                                 std::move(trained.text), std::move(trained.checkpoint_hash));
}

nlohmann::json item_record(const Item& item) {
  nlohmann::json j = {{"item_id", item.item_id},
                      {"index", item.index},
                      {"title", item.title},
                      {"description", item.description},
                      {"categories", item.categories}};
  j["brand"] = item.brand ? nlohmann::json(*item.brand) : nlohmann::json(nullptr);
  j["price"] = item.price ? nlohmann::json(*item.price) : nlohmann::json(nullptr);
  return j;
}

FlareService::FlareService(std::shared_ptr<const ServiceSnapshot> snapshot) : snapshot_(std::move(snapshot)) {}

void FlareService::swap(std::shared_ptr<const ServiceSnapshot> snapshot) {
  std::lock_guard lock(mu_);
  snapshot_ = std::move(snapshot);
}

std::shared_ptr<const ServiceSnapshot> FlareService::snapshot() const {
  std::lock_guard lock(mu_);
  return snapshot_;
}

HttpResponse FlareService::recommend(const std::string& body) const {
  const auto snap = snapshot();
  if (!snap || !snap->model) return error(503, "no model loaded");
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    return error(400, std::string("request body is not valid JSON: ") + e.what());
  }
  if (!req.is_object()) return error(400, "request body must be a JSON object");
  for (const auto& [key, value] : req.items()) {
    if (key != "history" && key != "critique" && key != "k") return error(400, "unknown field '" + key + "'", key);
  }
  if (!req.contains("history") || !req["history"].is_array() || req["history"].empty()) {
    return error(400, "history must be a non-empty array of item ids", "history");
  }
  std::vector<ItemIndex> history;
  for (const auto& id : req["history"]) {
    if (!id.is_string()) return error(400, "history entries must be strings", "history");
    const auto idx = snap->vocab.find(id.get<std::string>());
    if (!idx) {
      auto r = error(400, "unknown item_id '" + id.get<std::string>() + "'", "history");
      r.body["item_id"] = id;
      return r;
    }
    history.push_back(*idx);
  }
  std::optional<std::string> critique;
  if (req.contains("critique") && !req["critique"].is_null()) {
    if (!req["critique"].is_string()) return error(400, "critique must be a string", "critique");
    if (!req["critique"].get<std::string>().empty()) critique = req["critique"].get<std::string>();
  }
  std::size_t k = 10;
  if (req.contains("k")) {
    if (!req["k"].is_number_integer()) return error(400, "k must be an integer", "k");
    const auto v = req["k"].get<std::int64_t>();
    if (v < 1 || v > static_cast<std::int64_t>(kMaxRecommendK)) return error(400, "k must be in [1, 100]", "k");
    k = static_cast<std::size_t>(v);
  }

  const auto& model = *snap->model;
  const auto top = predict_topk(model, std::span<const ItemIndex>(history), critique, k, model.config().fusion,
                                snap->text.context());
  const auto levels = critique ? split_critique(*critique) : std::vector<std::string>{};
  auto items = nlohmann::json::array();
  for (const auto& s : top) {
    const auto& item = snap->vocab.at(s.item);
    items.push_back({{"item_id", item.item_id},
                     {"title", item.title},
                     {"categories", item.categories},
                     {"score", s.score},
                     {"overlap", category_overlap(item.categories, levels)}});
  }
  nlohmann::json out = {{"items", std::move(items)}, {"k", k}, {"fingerprint", snap->fingerprint}};
  out["critique"] = critique ? nlohmann::json(*critique) : nlohmann::json(nullptr);
  return {200, std::move(out)};
}

HttpResponse FlareService::item(const std::string& item_id) const {
  const auto snap = snapshot();
  if (!snap) return error(503, "no catalog loaded");
  const auto idx = snap->vocab.find(item_id);
  if (!idx) return error(404, "unknown item_id '" + item_id + "'");
  return {200, item_record(snap->vocab.at(*idx))};
}

HttpResponse FlareService::search(const std::string& query, std::size_t offset, std::size_t limit) const {
  const auto snap = snapshot();
  if (!snap) return error(503, "no catalog loaded");
  if (limit == 0 || limit > kMaxSearchLimit) return error(400, "limit must be in [1, 100]", "limit");
  const auto needle = lower(query);
  std::vector<const Item*> hits;
  for (const auto& item : snap->vocab.items()) {
    if (lower(item.title).find(needle) != std::string::npos) hits.push_back(&item);
  }
  auto items = nlohmann::json::array();
  for (std::size_t i = offset; i < hits.size() && i < offset + limit; ++i) items.push_back(item_record(*hits[i]));
  return {200, {{"query", query}, {"total", hits.size()}, {"offset", offset}, {"limit", limit}, {"items", std::move(items)}}};
}

HttpResponse FlareService::categories() const {
  const auto snap = snapshot();
  if (!snap) return error(503, "no catalog loaded");
  return {200, {{"node_count", snap->categories.node_count()}, {"tree", tree_json(snap->categories.tree())}}};
}

HttpResponse FlareService::health() const {
  const auto snap = snapshot();
  nlohmann::json body = {{"status", !snap ? "no_catalog" : snap->model ? "ok" : "no_model"}};
  body["checkpoint"] = snap && !snap->checkpoint_hash.empty() ? nlohmann::json(snap->checkpoint_hash)
                                                              : nlohmann::json(nullptr);
  body["items"] = snap ? snap->vocab.size() : 0;
  if (snap) body["fingerprint"] = snap->fingerprint;
  return {200, std::move(body)};
}

void FlareService::mount(httplib::Server& server) const {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  auto send = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto guarded = [send](auto handler) {
    return [send, handler](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, handler(req));
      } catch (const std::exception& e) {
        send(res, error(500, e.what()));
      }
    };
  };
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Post("/v1/recommend", guarded([this](const httplib::Request& req) { return recommend(req.body); }));
  server.Get(R"(/v1/items/([^/]+))", guarded([this](const httplib::Request& req) { return item(req.matches[1]); }));
  server.Get("/v1/items", guarded([this](const httplib::Request& req) {
               auto number = [&](const char* key, std::size_t fallback) -> std::optional<std::size_t> {
                 if (!req.has_param(key)) return fallback;
                 const auto v = req.get_param_value(key);
                 if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); })) {
                   return std::nullopt;
                 }
                 return static_cast<std::size_t>(std::stoull(v));
               };
               const auto offset = number("offset", 0);
               const auto limit = number("limit", kDefaultSearchLimit);
               if (!offset) return error(400, "offset must be a non-negative integer", "offset");
               if (!limit) return error(400, "limit must be a non-negative integer", "limit");
               return search(req.get_param_value("q"), *offset, *limit);
             }));
  server.Get("/v1/categories", guarded([this](const httplib::Request&) { return categories(); }));
  server.Get("/v1/health", guarded([this](const httplib::Request&) { return health(); }));
}

}  // namespace flare
