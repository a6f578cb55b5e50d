// Acceptance suite: one PASS/FAIL line per criterion. Run with criterion
// numbers as arguments to select a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flare/cli.hpp"
#include "flare/critique.hpp"
#include "flare/eval.hpp"
#include "flare/gradcheck.hpp"
#include "flare/hash.hpp"
#include "flare/model.hpp"
#include "flare/synth.hpp"
#include "flare/train.hpp"

using namespace flare;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kGradTolerance = 1e-4;
constexpr double kMetricTolerance = 1e-9;
constexpr double kPackingTolerance = 1e-5;  // relative
constexpr double kMaskRateLow = 0.14;
constexpr double kMaskRateHigh = 0.16;
constexpr double kMarkovRecall1 = 0.90;
constexpr double kTextMargin = 0.05;
constexpr double kCritiqueGap = 0.03;
constexpr std::size_t kMinCritiqueQueries = 500;
constexpr double kMutationFloor = 0.8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// --- 1 ------------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto rep = model_grad_check(21, 1e-5, kGradTolerance);
  std::string worst;
  double worst_err = -1;
  for (const auto& e : rep.tensors) {
    if (e.max_rel_err > worst_err) {
      worst_err = e.max_rel_err;
      worst = e.name;
    }
  }
  return {rep.passed() && !rep.tensors.empty(),
          std::to_string(rep.tensors.size()) + " tensors, max rel err " + fmt(rep.max_rel_err, 3) + " (" + worst +
              "), tol " + fmt(kGradTolerance, 1)};
}

// --- 2 ------------------------------------------------------------------------------

// Brute-force references: the target's rank counts strictly better items
// plus equal-scored items with a lower index.
std::size_t oracle_rank(const std::vector<double>& s, std::size_t target) {
  std::size_t better = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (s[j] > s[target] || (s[j] == s[target] && j < target)) ++better;
  }
  return better + 1;
}

std::vector<std::size_t> oracle_order(const std::vector<double>& s) {
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Repeated selection of the best remaining item: slow but obviously right.
  std::vector<std::size_t> out;
  std::vector<bool> used(s.size(), false);
  for (std::size_t r = 0; r < s.size(); ++r) {
    std::size_t best = s.size();
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (used[j]) continue;
      if (best == s.size() || s[j] > s[best]) best = j;
    }
    used[best] = true;
    out.push_back(best);
  }
  return out;
}

std::size_t oracle_rel(const std::vector<std::string>& item, const std::vector<std::string>& critique) {
  std::size_t r = 0;
  while (r < item.size() && r < critique.size() && item[r] == critique[r]) ++r;
  return r;
}

double oracle_cat_ndcg(const std::vector<std::size_t>& rels_in_rank_order, std::size_t levels, std::size_t k) {
  double dcg = 0, idcg = 0;
  const auto n = std::min(k, rels_in_rank_order.size());
  for (std::size_t i = 0; i < n; ++i) {
    dcg += (std::pow(2.0, static_cast<double>(rels_in_rank_order[i])) - 1) / std::log2(i + 2.0);
    idcg += (std::pow(2.0, static_cast<double>(levels)) - 1) / std::log2(i + 2.0);
  }
  return idcg > 0 ? dcg / idcg : 0.0;
}

Outcome metric_oracles() {
  Rng rng(2024);
  double worst = 0;
  std::size_t instances = 0;
  const char* names[] = {"a", "b", "c"};
  for (; instances < 1000; ++instances) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> s(n);
    // Coarse scores make ties common.
    const bool coarse = rng.bernoulli(0.5);
    for (auto& v : s) v = coarse ? static_cast<double>(rng.below(5)) : rng.normal();
    const auto target = static_cast<ItemIndex>(rng.below(n));
    const std::size_t k = 1 + rng.below(n + 3);

    const auto ranked = rank_scores(s);
    const auto rank = oracle_rank(s, static_cast<std::size_t>(target));
    worst = std::max(worst, std::abs(recall_at_k(ranked, target, k) - (rank <= k ? 1.0 : 0.0)));
    worst = std::max(worst, std::abs(ndcg_at_k(ranked, target, k) - (rank <= k ? 1.0 / std::log2(rank + 1.0) : 0.0)));
    worst = std::max(worst, std::abs(mrr(ranked, target) - 1.0 / static_cast<double>(rank)));

    ItemVocab vocab;
    std::vector<std::vector<std::string>> paths;
    for (std::size_t i = 0; i < n; ++i) {
      Item it;
      it.item_id = "x" + std::to_string(i);
      const std::size_t depth = rng.below(5);
      std::string name;
      for (std::size_t l = 0; l < depth; ++l) {
        name += names[rng.below(3)];
        it.categories.push_back(name);
      }
      paths.push_back(it.categories);
      vocab.add(std::move(it));
    }
    std::vector<std::string> critique;
    std::string cname;
    const std::size_t clevels = 1 + rng.below(4);
    for (std::size_t l = 0; l < clevels; ++l) {
      cname += names[rng.below(3)];
      critique.push_back(cname);
    }
    std::vector<std::size_t> rels;
    for (auto i : oracle_order(s)) rels.push_back(oracle_rel(paths[i], critique));
    const double ours = cat_ndcg(ranked, vocab, critique, k);
    worst = std::max(worst, std::abs(ours - oracle_cat_ndcg(rels, critique.size(), k)));
  }

  // Worked case: an item matching the first two of four critique levels has
  // relevance 2.
  const std::vector<std::string> crit{"s1", "s1 s2", "s1 s2 s3", "s1 s2 s3 s4"};
  const std::vector<std::string> partial{"s1", "s1 s2", "s1 s2 x3", "s1 s2 x3 x4"};
  const bool worked_rel = category_overlap(partial, crit) == 2 && oracle_rel(partial, crit) == 2;
  const std::vector<std::size_t> worked{4, 2, 0};
  const double worked_ours = cat_ndcg_from_relevance(worked, 4, 3);
  const double worked_ref = (15.0 + 3.0 / std::log2(3.0)) / (15.0 * (1 + 1 / std::log2(3.0) + 0.5));
  worst = std::max(worst, std::abs(worked_ours - worked_ref));

  return {worst <= kMetricTolerance && worked_rel,
          std::to_string(instances) + " instances, max abs diff " + fmt(worst, 3) + ", worked rel-2 case " +
              (worked_rel ? "ok" : "wrong")};
}

// --- 3 ------------------------------------------------------------------------------

ItemVocab toy_catalog(std::size_t n) {
  ItemVocab v;
  for (std::size_t i = 0; i < n; ++i) {
    Item it;
    it.item_id = "t" + std::to_string(i);
    it.title = "thing " + std::to_string(i);
    it.categories = {"k" + std::to_string(i % 3), "k" + std::to_string(i % 3) + "s" + std::to_string(i % 5)};
    v.add(std::move(it));
  }
  return v;
}

Outcome packing_equivalence() {
  const std::size_t n_items = 40, budget = 24;
  const auto vocab = toy_catalog(n_items);
  const HashingEncoder encoder(256, 16, 3);
  const auto cache = EmbeddingCache::build(vocab, encoder);
  const TextContext ctx{&cache, &encoder};
  ModelConfig mc;
  mc.n_items = n_items;
  mc.transformer = {2, 2, 32, 64, budget};
  mc.perceiver = {2, 2, 1, 32, 0};
  mc.d_text = 16;
  mc.fusion = FusionMode::TextIdCritique;
  mc.init_std = 0.2;
  const FlareModel<float> model(mc, 77);

  Rng rng(78);
  double worst = 0;
  std::size_t multi = 0;
  const FusionMode modes[] = {FusionMode::IdOnly, FusionMode::TextId, FusionMode::TextIdCritique};
  for (int b = 0; b < 100; ++b) {
    const auto mode = modes[b % 3];
    std::vector<MaskedSequence> seqs;
    const std::size_t count = 3 + rng.below(8);
    for (std::size_t s = 0; s < count; ++s) {
      std::vector<ItemIndex> items(2 + rng.below(budget - 1));
      for (auto& it : items) it = static_cast<ItemIndex>(rng.below(n_items));
      auto m = mask_sequence(items, 0.25, rng, MaskMode::Bidirectional, model.mask_index());
      for (std::size_t k = 0; k < m.labels.size(); ++k) {
        const auto level = static_cast<CritiqueLevel>(rng.below(3));
        m.critiques[k] = critique_for(vocab.at(m.labels[k]), level).text;
      }
      seqs.push_back(std::move(m));
    }
    const auto packs = pack_batches(seqs, budget);
    for (const auto& p : packs) multi += p.sources.size() > 1;
    Tape<float> t(GradMode::Disabled);
    auto out = forward_mlm(t, model, std::span<const PackedBatch>(packs), mode, ctx);
    const double packed = t.scalar(loss_mlm(t, out.logits, out.labels, Reduction::Sum));
    double separate = 0;
    for (const auto& s : seqs) {
      const auto p = pack_batches(std::vector<MaskedSequence>{s}, budget);
      Tape<float> u(GradMode::Disabled);
      auto o = forward_mlm(u, model, std::span<const PackedBatch>(p), mode, ctx);
      separate += u.scalar(loss_mlm(u, o.logits, o.labels, Reduction::Sum));
    }
    worst = std::max(worst, std::abs(packed - separate) / std::abs(separate));
  }
  return {worst <= kPackingTolerance && multi > 0,
          "100 batches, " + std::to_string(multi) + " multi-sequence packs, max rel diff " + fmt(worst, 3) +
              ", tol " + fmt(kPackingTolerance, 1)};
}

// --- 4 ------------------------------------------------------------------------------

Outcome masking_contract() {
  Rng rng(4);
  std::size_t positions = 0, drawn = 0, forced = 0, without = 0, sequences = 0;
  while (positions < 100000) {
    std::vector<ItemIndex> items(1 + rng.below(51));
    for (auto& it : items) it = static_cast<ItemIndex>(rng.below(1000));
    const auto m = mask_sequence(items, kDefaultMaskRate, rng, MaskMode::Bidirectional, 1000);
    positions += items.size();
    ++sequences;
    if (m.masked_positions.empty()) ++without;
    if (m.forced) {
      ++forced;
    } else {
      drawn += m.masked_positions.size();
    }
  }
  const double rate = static_cast<double>(drawn) / static_cast<double>(positions);
  return {rate >= kMaskRateLow && rate <= kMaskRateHigh && without == 0,
          std::to_string(positions) + " positions in " + std::to_string(sequences) + " sequences, pre-correction rate " +
              fmt(rate) + ", forced " + std::to_string(forced) + ", unmasked sequences " + std::to_string(without)};
}

// --- training substrates ------------------------------------------------------------------

struct Trained {
  TrainConfig cfg;
  TrainResult result;
  std::unique_ptr<TextResources> text;
};

Trained train_on(const CorpusBundle& bundle, TrainConfig cfg) {
  auto text = std::make_unique<TextResources>(make_text_resources(cfg.text, cfg.d_text, bundle.vocab));
  auto result = train(cfg, bundle, *text);
  return {std::move(cfg), std::move(result), std::move(text)};
}

EvalReport eval_on(const Trained& t, const CorpusBundle& bundle, EvalOptions eo = {}) {
  const ModelScorer scorer(t.result.model, t.cfg.fusion, t.text->context());
  return evaluate(scorer, bundle, eo);
}

// The category corpus shared by the text and critique criteria.
SynthSpec category_spec() {
  SynthSpec s;
  s.structure = SynthStructure::Category;
  s.n_items = 810;
  s.n_users = 800;
  s.branching = {3, 3, 3, 3};
  s.seed = 1;
  return s;
}

// Mutation needs histories that do not already pin the leaf: jumps move to a
// random leaf under the same level-3 parent, so a level-4 critique carries the
// information the history lacks while a level-2 one does not.
SynthSpec mutation_spec() {
  SynthSpec s;
  s.structure = SynthStructure::Category;
  s.n_items = 240;
  s.n_users = 2000;
  s.branching = {3, 2, 2, 2};
  s.jump_probability = 0.4;
  s.jump_levels = 3;
  s.seed = 1;
  return s;
}

// --- 5 ------------------------------------------------------------------------------

Outcome markov_learnability() {
  SynthSpec s;
  s.structure = SynthStructure::Markov;
  s.n_items = 100;
  s.n_users = 2000;
  s.seed = 5;
  const auto bundle = make_synthetic_corpus(s);
  auto cfg = load_preset("synthetic-id");
  cfg.total_steps = 2000;
  const auto t = train_on(bundle, cfg);
  const auto r = eval_on(t, bundle);
  const double r1 = r.metrics.at("recall@1");
  return {r1 >= kMarkovRecall1, "Recall@1 " + fmt(r1) + " after " + std::to_string(cfg.total_steps) + " steps on " +
                                   std::to_string(r.queries.size()) + " test users, need " + fmt(kMarkovRecall1, 2)};
}

// --- 6 ------------------------------------------------------------------------------

constexpr std::size_t kCategorySteps = 1500;

Outcome text_helps() {
  const auto bundle = make_synthetic_corpus(category_spec());
  auto id_cfg = load_preset("synthetic-id");
  auto tx_cfg = load_preset("synthetic-text_id");
  id_cfg.total_steps = tx_cfg.total_steps = kCategorySteps;
  const double id = eval_on(train_on(bundle, id_cfg), bundle).metrics.at("recall@10");
  const double tx = eval_on(train_on(bundle, tx_cfg), bundle).metrics.at("recall@10");
  return {tx - id >= kTextMargin, "Recall@10 id_only " + fmt(id) + ", text_id " + fmt(tx) + " at " +
                                      std::to_string(kCategorySteps) + " steps each, need +" + fmt(kTextMargin, 2)};
}

// --- 7 ------------------------------------------------------------------------------

Trained critique_model(const CorpusBundle& bundle, std::size_t steps) {
  auto cfg = load_preset("synthetic-critique");
  cfg.total_steps = steps;
  return train_on(bundle, cfg);
}

Outcome critique_ordering() {
  const auto bundle = make_synthetic_corpus(category_spec());
  const auto model = critique_model(bundle, kCategorySteps);
  double r[3];
  std::size_t queries = 0;
  const CritiqueLevel levels[] = {CritiqueLevel::None, CritiqueLevel::Broad, CritiqueLevel::Precise};
  for (int i = 0; i < 3; ++i) {
    EvalOptions eo;
    eo.critique = levels[i];
    const auto rep = eval_on(model, bundle, eo);
    r[i] = rep.metrics.at("recall@10");
    queries = rep.queries.size();
  }
  const bool pass = queries >= kMinCritiqueQueries && r[2] - r[1] >= kCritiqueGap && r[1] - r[0] >= kCritiqueGap;
  return {pass, "Recall@10 none " + fmt(r[0]) + ", broad " + fmt(r[1]) + ", precise " + fmt(r[2]) + " over " +
                    std::to_string(queries) + " queries, gaps need " + fmt(kCritiqueGap, 2)};
}

// --- 8 ------------------------------------------------------------------------------

constexpr std::size_t kMutationSteps = 2000;

Outcome mutation_alignment() {
  const auto bundle = make_synthetic_corpus(mutation_spec());
  const auto model = critique_model(bundle, kMutationSteps);
  double c[5] = {};
  std::size_t skipped = 0;
  for (std::size_t level : {2, 4}) {
    EvalOptions eo;
    eo.mutation = MutationSpec{level, 5};
    eo.seed = 8;
    const auto rep = eval_on(model, bundle, eo);
    c[level] = rep.metrics.at("cat_ndcg@10");
    skipped += rep.skipped;
  }
  return {c[4] >= c[2] && c[4] >= kMutationFloor, "Cat-nDCG@10 level 4 " + fmt(c[4]) + ", level 2 " + fmt(c[2]) +
                                                      ", skipped " + std::to_string(skipped) + ", floor " +
                                                      fmt(kMutationFloor, 2)};
}

// --- 9 ------------------------------------------------------------------------------

bool same_bits(const Matrix<float>& a, const Matrix<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

Outcome ablation_exactness() {
  SynthSpec s;
  s.structure = SynthStructure::Category;
  s.n_items = 96;
  s.n_users = 300;
  s.jump_probability = 0.2;
  s.seed = 9;
  const auto bundle = make_synthetic_corpus(s);
  std::vector<std::string> notes;
  bool pass = true;

  // Zeroed text path against id_only, on a model with trained text weights.
  auto cfg = load_preset("synthetic-text_id");
  cfg.total_steps = 60;
  auto trained = train_on(bundle, cfg);
  auto& model = trained.result.model;
  model.params().get(std::string(pname::kOutputProjection) + ".w").value.setZero();
  model.params().get(std::string(pname::kOutputProjection) + ".b").value.setZero();
  std::vector<Query> queries;
  for (const auto& ex : bundle.splits.test) queries.push_back({ex.prefix, std::nullopt});
  const auto ctx = trained.text->context();
  const bool identical = same_bits(score_queries(model, std::span<const Query>(queries), FusionMode::IdOnly, ctx),
                                   score_queries(model, std::span<const Query>(queries), FusionMode::TextId, ctx));
  pass &= identical;
  notes.push_back(std::string("zeroed text ") + (identical ? "bit-identical" : "DIFFERS"));

  // Contrastive off against alpha = 1.
  auto off = load_preset("synthetic-text_id");
  off.total_steps = 40;
  off.loss.contrastive_enabled = false;
  auto one = off;
  one.loss.contrastive_enabled = true;
  one.loss.alpha = 1.0;
  const auto a = train_on(bundle, off);
  const auto b = train_on(bundle, one);
  bool same_losses = a.result.log.size() == b.result.log.size();
  for (std::size_t i = 0; same_losses && i < a.result.log.size(); ++i) {
    same_losses = a.result.log[i].l_mlm == b.result.log[i].l_mlm && a.result.log[i].l_total == b.result.log[i].l_total;
  }
  bool same_params = true;
  for (const auto& p : a.result.model.params()) {
    same_params &= same_bits(p.value, b.result.model.params().get(p.name).value);
  }
  pass &= same_losses && same_params;
  notes.push_back(std::string("contrastive off vs alpha=1 ") + (same_losses && same_params ? "exact" : "DIFFERS"));

  // The five ablation variants train and evaluate end to end.
  struct Variant {
    const char* name;
    std::function<void(TrainConfig&)> apply;
  };
  const Variant variants[] = {
      {"w/o text", [](TrainConfig& c) { c.fusion = FusionMode::IdOnly; }},
      {"w/o perceiver", [](TrainConfig& c) { c.reducer = TextReducer::MeanPool; }},
      {"w/o bidirectional", [](TrainConfig& c) { c.masking = MaskMode::LastOnly; }},
      {"w/o contrastive", [](TrainConfig& c) { c.loss.contrastive_enabled = false; }},
      {"w/o duplicates", [](TrainConfig& c) { c.dedup = true; }},
  };
  std::size_t ran = 0;
  for (const auto& v : variants) {
    auto c = load_preset("synthetic-text_id");
    c.total_steps = 40;
    v.apply(c);
    const auto t = train_on(bundle, c);
    const auto r = eval_on(t, bundle);
    const bool ok = t.result.log.size() == c.total_steps && std::isfinite(t.result.log.back().l_total) &&
                    r.check_invariants().empty() && std::isfinite(r.metrics.at("recall@10"));
    ran += ok;
    if (!ok) notes.push_back(std::string(v.name) + " FAILED");
  }
  pass &= ran == 5;
  notes.push_back(std::to_string(ran) + "/5 variants ran");

  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : ", ") + n;
  return {pass, detail};
}

// --- 10 -----------------------------------------------------------------------------

struct PipelineHashes {
  std::string bundle, checkpoint, report;
  int exit_code = 0;
};

PipelineHashes run_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string wd = dir.string();
  std::ostringstream out, err;
  auto call = [&](std::vector<std::string> args) {
    std::vector<const char*> argv{"flare", "--workdir", wd.c_str()};
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  };
  PipelineHashes h;
  h.exit_code = call({"synth", "--structure", "category", "--items", "96", "--users", "300", "--jump", "0.2", "--seed",
                      "10", "--out", "corpus.json"});
  if (h.exit_code == 0) {
    h.exit_code = call({"train", "--bundle", "corpus.json", "--preset", "synthetic-critique", "--steps", "500", "--seed",
                        "10", "--out", "run"});
  }
  if (h.exit_code == 0) {
    h.exit_code = call({"eval", "--bundle", "corpus.json", "--checkpoint", "run/final.ckpt", "--critique", "precise",
                        "--queries", "--out", "report.json"});
  }
  if (h.exit_code != 0) {
    std::cerr << err.str();
    return h;
  }
  h.bundle = sha256_file(dir / "corpus.json");
  h.checkpoint = sha256_file(dir / "run" / "final.ckpt");
  h.report = sha256_file(dir / "report.json");
  return h;
}

Outcome determinism() {
  const auto base = fs::temp_directory_path() / "flare_acceptance_determinism";
  const auto a = run_pipeline(base / "a");
  const auto b = run_pipeline(base / "b");
  if (a.exit_code != 0 || b.exit_code != 0) {
    return {false, "pipeline exit codes " + std::to_string(a.exit_code) + " and " + std::to_string(b.exit_code)};
  }
  const bool same = a.bundle == b.bundle && a.checkpoint == b.checkpoint && a.report == b.report;
  fs::remove_all(base);
  return {same, "bundle " + a.bundle.substr(0, 12) + (a.bundle == b.bundle ? " == " : " != ") + b.bundle.substr(0, 12) +
                    ", checkpoint " + a.checkpoint.substr(0, 12) + (a.checkpoint == b.checkpoint ? " == " : " != ") +
                    b.checkpoint.substr(0, 12) + ", report " + a.report.substr(0, 12) +
                    (a.report == b.report ? " == " : " != ") + b.report.substr(0, 12)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient fidelity", 60, gradient_fidelity},
      {2, "metric oracles", 10, metric_oracles},
      {3, "packing equivalence", 60, packing_equivalence},
      {4, "masking contract", 10, masking_contract},
      {5, "id-only learnability", 300, markov_learnability},
      {6, "text helps", 600, text_helps},
      {7, "critique ordering", 600, critique_ordering},
      {8, "mutation alignment", 600, mutation_alignment},
      {9, "ablation exactness", 300, ablation_exactness},
      {10, "determinism", 300, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0, ran = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    ++ran;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << ' ' << std::setw(2) << c.id << ' ' << c.name << ": " << o.detail << " ["
              << std::fixed << std::setprecision(1) << secs << "s of " << c.budget_s << "s"
              << (in_time ? "" : ", over budget") << "]" << std::defaultfloat << std::endl;
  }
  std::cout << (ran - failed) << '/' << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
