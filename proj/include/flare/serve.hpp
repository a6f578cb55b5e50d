#pragma once

// HTTP inference service: recommendations with optional critique steering
// plus read-only catalog access. Handlers run against an immutable snapshot
// that can be replaced atomically while requests are in flight.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "flare/critique.hpp"
#include "flare/data.hpp"
#include "flare/model.hpp"
#include "flare/train.hpp"

namespace httplib {
class Server;
}

namespace flare {

struct ServiceSnapshot {
  ServiceSnapshot(ItemVocab vocab, std::optional<FlareModel<float>> model, TextResources text,
                  std::string checkpoint_hash);

  ItemVocab vocab;
  CategoryIndex categories;
  std::optional<FlareModel<float>> model;  // catalog-only when empty
  TextResources text;
  std::string checkpoint_hash;
  nlohmann::json fingerprint;
};

// Reads the corpus bundle and, when given, a checkpoint whose metadata names
// the text settings it was trained with.
std::shared_ptr<const ServiceSnapshot> load_snapshot(const std::filesystem::path& bundle,
                                                     const std::optional<std::filesystem::path>& checkpoint);

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

inline constexpr std::size_t kMaxRecommendK = 100;
inline constexpr std::size_t kDefaultSearchLimit = 20;
inline constexpr std::size_t kMaxSearchLimit = 100;

class FlareService {
 public:
  explicit FlareService(std::shared_ptr<const ServiceSnapshot> snapshot = nullptr);

  void swap(std::shared_ptr<const ServiceSnapshot> snapshot);
  std::shared_ptr<const ServiceSnapshot> snapshot() const;

  // Transport-free handlers; `mount` wires them to routes.
  HttpResponse recommend(const std::string& body) const;
  HttpResponse item(const std::string& item_id) const;
  HttpResponse search(const std::string& query, std::size_t offset, std::size_t limit) const;
  HttpResponse categories() const;
  HttpResponse health() const;

  // Registers /v1 routes and CORS handling. The service must outlive the server.
  void mount(httplib::Server& server) const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const ServiceSnapshot> snapshot_;
};

nlohmann::json item_record(const Item& item);

}  // namespace flare
