#include "flare/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace flare {

RankedList rank_scores(std::span<const double> scores, std::size_t depth, std::string query_id) {
  const auto n = scores.size();
  const auto keep = depth == 0 ? n : std::min(depth, n);
  std::vector<ItemIndex> order(n);
  std::iota(order.begin(), order.end(), ItemIndex{0});
  auto better = [&](ItemIndex a, ItemIndex b) {
    const auto sa = scores[static_cast<std::size_t>(a)];
    const auto sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
  RankedList r;
  r.query_id = std::move(query_id);
  r.items.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  for (auto i : r.items) r.scores.push_back(scores[static_cast<std::size_t>(i)]);
  return r;
}

std::size_t rank_of(const RankedList& ranked, ItemIndex target) {
  const auto it = std::find(ranked.items.begin(), ranked.items.end(), target);
  return it == ranked.items.end() ? 0 : static_cast<std::size_t>(it - ranked.items.begin()) + 1;
}

int recall_at_k(const RankedList& ranked, ItemIndex target, std::size_t k) {
  if (k == 0) throw std::invalid_argument("recall_at_k: k must be at least 1");
  const auto r = rank_of(ranked, target);
  return r != 0 && r <= k ? 1 : 0;
}

double ndcg_at_k(const RankedList& ranked, ItemIndex target, std::size_t k) {
  if (k == 0) throw std::invalid_argument("ndcg_at_k: k must be at least 1");
  const auto r = rank_of(ranked, target);
  return r != 0 && r <= k ? 1.0 / std::log2(static_cast<double>(r) + 1.0) : 0.0;
}

double mrr(const RankedList& ranked, ItemIndex target) {
  const auto r = rank_of(ranked, target);
  if (r == 0) throw std::invalid_argument("mrr: target " + std::to_string(target) + " not in ranking");
  return 1.0 / static_cast<double>(r);
}

std::string_view to_string(IdcgMode m) { return m == IdcgMode::FullRelevance ? "full" : "within_list"; }

IdcgMode idcg_mode_from_string(std::string_view s) {
  if (s == "full") return IdcgMode::FullRelevance;
  if (s == "within_list") return IdcgMode::WithinList;
  throw std::invalid_argument("unknown IDCG mode '" + std::string(s) + "' (expected full, within_list)");
}

double cat_ndcg_from_relevance(std::span<const std::size_t> rels, std::size_t levels, std::size_t k, IdcgMode mode) {
  if (k == 0) throw std::invalid_argument("cat_ndcg: k must be at least 1");
  const auto n = std::min(k, rels.size());
  auto gain = [](std::size_t rel) { return std::exp2(static_cast<double>(rel)) - 1.0; };
  auto discount = [](std::size_t i) { return 1.0 / std::log2(static_cast<double>(i) + 2.0); };
  double dcg = 0;
  for (std::size_t i = 0; i < n; ++i) dcg += gain(rels[i]) * discount(i);
  double idcg = 0;
  if (mode == IdcgMode::FullRelevance) {
    for (std::size_t i = 0; i < n; ++i) idcg += gain(levels) * discount(i);
  } else {
    std::vector<std::size_t> best(rels.begin(), rels.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(best.begin(), best.end(), std::greater<>());
    for (std::size_t i = 0; i < n; ++i) idcg += gain(best[i]) * discount(i);
  }
  return idcg > 0 ? dcg / idcg : 0.0;
}

double cat_ndcg(const RankedList& ranked, const ItemVocab& vocab, std::span<const std::string> critique,
                std::size_t k, IdcgMode mode) {
  std::vector<std::size_t> rels;
  const auto n = std::min(k, ranked.items.size());
  for (std::size_t i = 0; i < n; ++i) rels.push_back(category_overlap(vocab.at(ranked.items[i]).categories, critique));
  return cat_ndcg_from_relevance(rels, critique.size(), k, mode);
}

// --- scorers -------------------------------------------------------------------------

ModelScorer::ModelScorer(const FlareModel<float>& model, FusionMode mode, TextContext text, std::string fingerprint)
    : model_(model), mode_(mode), text_(text), fingerprint_(std::move(fingerprint)) {}

std::vector<std::vector<double>> ModelScorer::score(std::span<const Query> queries) const {
  const auto m = score_queries(model_, queries, mode_, text_);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out[static_cast<std::size_t>(r)].assign(m.row(r).data(), m.row(r).data() + m.cols());
  }
  return out;
}

// --- harness -------------------------------------------------------------------------

nlohmann::json EvalOptions::to_json() const {
  nlohmann::json j = {{"split", split == EvalSplit::Valid ? "valid" : "test"},
                      {"critique", std::string(flare::to_string(critique))},
                      {"seed", seed},
                      {"recall_ks", recall_ks},
                      {"ndcg_k", ndcg_k},
                      {"cat_k", cat_k},
                      {"idcg", std::string(flare::to_string(idcg))},
                      {"max_queries", max_queries}};
  j["mutation"] = mutation ? nlohmann::json{{"level", mutation->level}, {"min_items", mutation->min_items}}
                           : nlohmann::json(nullptr);
  return j;
}

namespace {

std::string recall_key(std::size_t k) { return "recall@" + std::to_string(k); }

}  // namespace

nlohmann::json EvalReport::to_json(bool with_queries) const {
  nlohmann::json j = {{"config", config}, {"metrics", metrics}, {"n_queries", queries.size()},
                      {"skipped", skipped}, {"critique_fallbacks", fallbacks}};
  if (with_queries) {
    auto& qs = j["queries"] = nlohmann::json::array();
    for (const auto& q : queries) {
      nlohmann::json rec = {{"user_id", q.user_id}, {"target", q.target}, {"rank", q.rank},
                            {"ndcg", q.ndcg},       {"mrr", q.mrr},       {"top", q.top}};
      for (const auto& [k, v] : q.recall) rec[recall_key(k)] = v;
      rec["critique"] = q.critique ? nlohmann::json(*q.critique) : nlohmann::json(nullptr);
      rec["cat_ndcg"] = q.cat_ndcg ? nlohmann::json(*q.cat_ndcg) : nlohmann::json(nullptr);
      rec["critique_fallback"] = q.critique_fallback;
      qs.push_back(std::move(rec));
    }
  }
  return j;
}

void EvalReport::write_csv(std::ostream& os) const {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
  };
  os << "user_id,target,rank";
  if (!queries.empty()) {
    for (const auto& [k, v] : queries.front().recall) os << ',' << recall_key(k);
  }
  os << ",ndcg,mrr,cat_ndcg,critique\n";
  for (const auto& q : queries) {
    os << quote(q.user_id) << ',' << q.target << ',' << q.rank;
    for (const auto& [k, v] : q.recall) os << ',' << v;
    os << ',' << q.ndcg << ',' << q.mrr << ',';
    if (q.cat_ndcg) os << *q.cat_ndcg;
    os << ',' << (q.critique ? quote(*q.critique) : std::string()) << '\n';
  }
}

std::vector<std::string> EvalReport::check_invariants() const {
  std::vector<std::string> failures;
  auto check = [&](const std::string& name, double sum, std::size_t n) {
    const auto it = metrics.find(name);
    if (n == 0) return;
    if (it == metrics.end()) {
      failures.push_back(name + " missing");
    } else if (std::abs(it->second - sum / static_cast<double>(n)) > 1e-9) {
      failures.push_back(name + " differs from the per-query mean");
    }
  };
  if (queries.empty()) return failures;
  for (const auto& [k, v] : queries.front().recall) {
    double s = 0;
    for (const auto& q : queries) s += q.recall.at(k);
    check(recall_key(k), s, queries.size());
  }
  double nd = 0, rr = 0, cn = 0;
  std::size_t n_cat = 0;
  for (const auto& q : queries) {
    nd += q.ndcg;
    rr += q.mrr;
    if (q.cat_ndcg) {
      cn += *q.cat_ndcg;
      ++n_cat;
    }
  }
  const auto& cfg = config;
  check("ndcg@" + std::to_string(cfg.at("ndcg_k").get<std::size_t>()), nd, queries.size());
  check("mrr", rr, queries.size());
  check("cat_ndcg@" + std::to_string(cfg.at("cat_k").get<std::size_t>()), cn, n_cat);
  return failures;
}

EvalReport evaluate(const Scorer& scorer, const CorpusBundle& bundle, const EvalOptions& options) {
  const auto& examples = options.split == EvalSplit::Valid ? bundle.splits.valid : bundle.splits.test;
  if (examples.empty()) throw std::invalid_argument("evaluate: split is empty");
  if (scorer.n_items() != bundle.vocab.size()) throw std::invalid_argument("evaluate: scorer and corpus disagree on item count");
  if (options.recall_ks.empty()) throw std::invalid_argument("evaluate: no recall cutoffs");
  const auto& vocab = bundle.vocab;
  const std::optional<CategoryIndex> index =
      options.mutation ? std::optional<CategoryIndex>(CategoryIndex(vocab)) : std::nullopt;
  const Rng base(options.seed);

  EvalReport report;
  report.config = options.to_json();
  report.config["scorer"] = scorer.fingerprint();

  struct Pending {
    const EvalExample* ex;
    std::optional<std::string> critique;
    bool fallback;
  };
  std::vector<Pending> pending;
  const auto limit = options.max_queries ? std::min(options.max_queries, examples.size()) : examples.size();
  for (std::size_t i = 0; i < limit; ++i) {
    const auto& ex = examples[i];
    const auto& target = vocab.at(ex.target);
    if (options.mutation) {
      Rng rng = base.fork(i);
      auto m = mutate_critique(target.categories, *options.mutation, *index, rng);
      if (!m) {
        ++report.skipped;
        continue;
      }
      pending.push_back({&ex, std::move(m), false});
    } else {
      auto c = critique_for(target, options.critique);
      pending.push_back({&ex, std::move(c.text), c.fallback});
    }
  }

  const auto max_k = *std::max_element(options.recall_ks.begin(), options.recall_ks.end());
  for (std::size_t start = 0; start < pending.size(); start += options.chunk) {
    const auto end = std::min(pending.size(), start + std::max<std::size_t>(options.chunk, 1));
    std::vector<Query> queries;
    for (std::size_t i = start; i < end; ++i) queries.push_back({pending[i].ex->prefix, pending[i].critique});
    const auto scores = scorer.score(queries);
    for (std::size_t i = start; i < end; ++i) {
      const auto& p = pending[i];
      const auto ranked = rank_scores(scores[i - start], 0, p.ex->user_id);
      EvalQueryRecord q;
      q.user_id = p.ex->user_id;
      q.target = p.ex->target;
      q.rank = rank_of(ranked, q.target);
      for (auto k : options.recall_ks) q.recall[k] = recall_at_k(ranked, q.target, k);
      q.ndcg = ndcg_at_k(ranked, q.target, options.ndcg_k);
      q.mrr = mrr(ranked, q.target);
      q.critique = p.critique;
      q.critique_fallback = p.fallback;
      if (p.fallback) ++report.fallbacks;
      // Cat-nDCG is scored against the critique when there is one, else
      // against the target's own precise category path.
      std::vector<std::string> reference =
          p.critique ? split_critique(*p.critique)
                     : split_critique(critique_for(vocab.at(q.target), CritiqueLevel::Precise).text.value_or(""));
      if (!reference.empty()) q.cat_ndcg = cat_ndcg(ranked, vocab, reference, options.cat_k, options.idcg);
      const auto top = std::min(ranked.items.size(), std::max(options.cat_k, max_k));
      q.top.assign(ranked.items.begin(), ranked.items.begin() + static_cast<std::ptrdiff_t>(top));
      report.queries.push_back(std::move(q));
    }
  }

  if (report.queries.empty()) throw std::invalid_argument("evaluate: every query was skipped");
  const double n = static_cast<double>(report.queries.size());
  for (auto k : options.recall_ks) {
    double s = 0;
    for (const auto& q : report.queries) s += q.recall.at(k);
    report.metrics[recall_key(k)] = s / n;
  }
  double nd = 0, rr = 0, cn = 0;
  std::size_t n_cat = 0;
  for (const auto& q : report.queries) {
    nd += q.ndcg;
    rr += q.mrr;
    if (q.cat_ndcg) {
      cn += *q.cat_ndcg;
      ++n_cat;
    }
  }
  report.metrics["ndcg@" + std::to_string(options.ndcg_k)] = nd / n;
  report.metrics["mrr"] = rr / n;
  if (n_cat) report.metrics["cat_ndcg@" + std::to_string(options.cat_k)] = cn / static_cast<double>(n_cat);
  return report;
}

}  // namespace flare
