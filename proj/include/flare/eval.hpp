#pragma once

// Ranking metrics, the leave-one-out evaluation harness with critique levels
// and category mutation, and the evaluation report.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flare/bundle.hpp"
#include "flare/critique.hpp"
#include "flare/model.hpp"

namespace flare {

// Items in descending score order, ties by ascending index.
struct RankedList {
  std::string query_id;
  std::vector<ItemIndex> items;
  std::vector<double> scores;
};

// Ranks all scores, or only the best `depth` when depth is non-zero.
RankedList rank_scores(std::span<const double> scores, std::size_t depth = 0, std::string query_id = {});

// 1-based rank of target, or 0 when absent.
std::size_t rank_of(const RankedList& ranked, ItemIndex target);

int recall_at_k(const RankedList& ranked, ItemIndex target, std::size_t k);
double ndcg_at_k(const RankedList& ranked, ItemIndex target, std::size_t k);
// Throws when the target is not ranked.
double mrr(const RankedList& ranked, ItemIndex target);

// Ideal DCG for Cat-nDCG: every one of the k ranks at full relevance L, or
// the retrieved relevances re-sorted (within-list).
enum class IdcgMode { FullRelevance, WithinList };

std::string_view to_string(IdcgMode m);
IdcgMode idcg_mode_from_string(std::string_view s);

// Graded nDCG with gain 2^rel - 1 over the first min(k, |rels|) ranks.
double cat_ndcg_from_relevance(std::span<const std::size_t> rels, std::size_t levels, std::size_t k,
                               IdcgMode mode = IdcgMode::FullRelevance);

// rel of each retrieved item = shared category prefix length with the
// critique levels; L = number of critique levels.
double cat_ndcg(const RankedList& ranked, const ItemVocab& vocab, std::span<const std::string> critique,
                std::size_t k, IdcgMode mode = IdcgMode::FullRelevance);

// Produces full-vocabulary scores for a batch of queries.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::size_t n_items() const = 0;
  // One row of n_items scores per query.
  virtual std::vector<std::vector<double>> score(std::span<const Query> queries) const = 0;
  virtual std::string fingerprint() const = 0;
};

class ModelScorer final : public Scorer {
 public:
  ModelScorer(const FlareModel<float>& model, FusionMode mode, TextContext text, std::string fingerprint = {});
  std::size_t n_items() const override { return model_.n_items(); }
  std::vector<std::vector<double>> score(std::span<const Query> queries) const override;
  std::string fingerprint() const override { return fingerprint_; }

 private:
  const FlareModel<float>& model_;
  FusionMode mode_;
  TextContext text_;
  std::string fingerprint_;
};

enum class EvalSplit { Valid, Test };

struct EvalOptions {
  EvalSplit split = EvalSplit::Test;
  CritiqueLevel critique = CritiqueLevel::None;
  std::optional<MutationSpec> mutation;  // replaces the critique with a mutated precise one
  std::uint64_t seed = 0;                // mutation sampling
  std::vector<std::size_t> recall_ks = {1, 5, 10};
  std::size_t ndcg_k = 10;
  std::size_t cat_k = 10;
  IdcgMode idcg = IdcgMode::FullRelevance;
  std::size_t max_queries = 0;  // 0: all
  std::size_t chunk = 256;      // queries scored per pass

  nlohmann::json to_json() const;
};

struct EvalQueryRecord {
  std::string user_id;
  ItemIndex target = -1;
  std::size_t rank = 0;
  std::map<std::size_t, int> recall;
  double ndcg = 0;
  double mrr = 0;
  std::optional<std::string> critique;
  std::optional<double> cat_ndcg;
  bool critique_fallback = false;
  std::vector<ItemIndex> top;  // first cat_k items
};

struct EvalReport {
  nlohmann::json config;
  std::map<std::string, double> metrics;  // "recall@1", "ndcg@10", "mrr", "cat_ndcg@10"
  std::vector<EvalQueryRecord> queries;
  std::size_t skipped = 0;    // mutation found no candidate
  std::size_t fallbacks = 0;  // critique built from fewer levels than asked

  nlohmann::json to_json(bool with_queries = true) const;
  void write_csv(std::ostream& os) const;
  // Aggregates equal the mean of the per-query values (to 1e-9). Returns the
  // failures, empty when consistent.
  std::vector<std::string> check_invariants() const;
};

// Builds each query from the split (with its critique), scores over the full
// vocabulary and aggregates. Throws when the split is empty.
EvalReport evaluate(const Scorer& scorer, const CorpusBundle& bundle, const EvalOptions& options);

}  // namespace flare
