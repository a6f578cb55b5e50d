#include "flare/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace flare {

namespace {

template <class E>
struct Named {
  E value;
  std::string_view name;
};

constexpr Named<FusionMode> kFusionNames[] = {
    {FusionMode::IdOnly, "id_only"},
    {FusionMode::TextId, "text_id"},
    {FusionMode::TextIdCritique, "text_id_critique"},
};

constexpr Named<TextReducer> kReducerNames[] = {
    {TextReducer::Perceiver, "perceiver"},
    {TextReducer::MeanPool, "mean_pool"},
};

template <class E, std::size_t N>
std::string_view name_of(const Named<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  throw std::logic_error("unnamed enum value");
}

template <class E, std::size_t N>
E parse_name(const Named<E> (&table)[N], std::string_view s, const char* what) {
  std::string options;
  for (const auto& e : table) {
    if (e.name == s) return e.value;
    options += (options.empty() ? "" : ", ") + std::string(e.name);
  }
  throw std::invalid_argument("unknown " + std::string(what) + " '" + std::string(s) + "' (expected " + options + ")");
}

Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

}  // namespace

std::string_view to_string(FusionMode m) { return name_of(kFusionNames, m); }
FusionMode fusion_mode_from_string(std::string_view s) { return parse_name(kFusionNames, s, "fusion mode"); }
std::string_view to_string(TextReducer r) { return name_of(kReducerNames, r); }
TextReducer text_reducer_from_string(std::string_view s) { return parse_name(kReducerNames, s, "text reducer"); }

void ModelConfig::validate() const {
  if (n_items == 0) throw std::invalid_argument("model config: n_items must be positive");
  transformer.validate();
  perceiver.validate();
  if (d_text == 0) throw std::invalid_argument("model config: d_text must be positive");
  if (!(init_std > 0)) throw std::invalid_argument("model config: init_std must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"n_items", n_items},
      {"transformer",
       {{"n_layers", transformer.n_layers},
        {"n_heads", transformer.n_heads},
        {"d_model", transformer.d_model},
        {"d_hidden", transformer.d_hidden},
        {"max_positions", transformer.max_positions}}},
      {"perceiver",
       {{"n_latents", perceiver.n_latents},
        {"n_heads", perceiver.n_heads},
        {"n_layers", perceiver.n_layers},
        {"d_model", perceiver.d_model},
        {"d_hidden", perceiver.d_hidden}}},
      {"d_text", d_text},
      {"fusion", std::string(to_string(fusion))},
      {"reducer", std::string(to_string(reducer))},
      {"init_std", init_std},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_items = j.at("n_items").get<std::size_t>();
  const auto& t = j.at("transformer");
  c.transformer.n_layers = t.at("n_layers").get<std::size_t>();
  c.transformer.n_heads = t.at("n_heads").get<std::size_t>();
  c.transformer.d_model = t.at("d_model").get<std::size_t>();
  c.transformer.d_hidden = t.at("d_hidden").get<std::size_t>();
  c.transformer.max_positions = t.at("max_positions").get<std::size_t>();
  const auto& p = j.at("perceiver");
  c.perceiver.n_latents = p.at("n_latents").get<std::size_t>();
  c.perceiver.n_heads = p.at("n_heads").get<std::size_t>();
  c.perceiver.n_layers = p.at("n_layers").get<std::size_t>();
  c.perceiver.d_model = p.at("d_model").get<std::size_t>();
  c.perceiver.d_hidden = p.value("d_hidden", std::size_t{0});
  c.d_text = j.at("d_text").get<std::size_t>();
  c.fusion = fusion_mode_from_string(j.at("fusion").get<std::string>());
  c.reducer = text_reducer_from_string(j.value("reducer", std::string("perceiver")));
  c.init_std = j.value("init_std", 0.02);
  c.validate();
  return c;
}

void LossConfig::validate() const {
  if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("loss config: alpha must lie in [0, 1]");
  if (!(tau > 0)) throw std::invalid_argument("loss config: tau must be positive");
  if (!(margin >= 0)) throw std::invalid_argument("loss config: margin must be non-negative");
}

// --- parameters ---------------------------------------------------------------

namespace {

template <class T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const auto d = cfg.transformer.d_model;
  const auto dp = cfg.perceiver.d_model;
  const double sd = cfg.init_std;
  ParamStore<T> s;
  s.add(pname::kItemEmbeddings, random_matrix<T>(rng, cfg.n_items + 2, d, sd));
  s.add(pname::kPositionEmbeddings, random_matrix<T>(rng, cfg.transformer.max_positions, d, sd));
  init_transformer(s, cfg.transformer, pname::kEncoder, rng, sd);
  s.add(std::string(pname::kFinalNorm) + ".g", Matrix<T>::Ones(1, ix(d)));
  s.add(std::string(pname::kFinalNorm) + ".b", Matrix<T>::Zero(1, ix(d)));
  s.add(pname::kTypeText, random_matrix<T>(rng, 1, cfg.d_text, sd));
  s.add(pname::kTypeCritique, random_matrix<T>(rng, 1, cfg.d_text, sd));
  s.add(pname::kTextMask, random_matrix<T>(rng, 1, cfg.d_text, sd));
  s.add(std::string(pname::kTextInput) + ".w", random_matrix<T>(rng, cfg.d_text, dp, 1.0 / std::sqrt(double(cfg.d_text))));
  s.add(std::string(pname::kTextInput) + ".b", Matrix<T>::Zero(1, ix(dp)));
  init_perceiver(s, cfg.perceiver, pname::kPerceiver, rng, sd);
  s.add(std::string(pname::kTextNorm) + ".g", Matrix<T>::Constant(1, ix(dp), static_cast<T>(sd)));
  s.add(std::string(pname::kTextNorm) + ".b", Matrix<T>::Zero(1, ix(dp)));
  s.add(std::string(pname::kOutputProjection) + ".w", random_matrix<T>(rng, dp, d, sd));
  s.add(std::string(pname::kOutputProjection) + ".b", Matrix<T>::Zero(1, ix(d)));
  return s;
}

}  // namespace

template <class T>
FlareModel<T>::FlareModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), params_(init_params<T>(cfg_, seed)) {}

template <class T>
FlareModel<T>::FlareModel(ModelConfig cfg, ParamStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  const auto expected = init_params<T>(cfg_, 0);
  if (expected.size() != params_.size()) {
    throw std::invalid_argument("model parameters: expected " + std::to_string(expected.size()) + " tensors, got " +
                                std::to_string(params_.size()));
  }
  for (const auto& e : expected) {
    if (!params_.contains(e.name)) throw std::invalid_argument("model parameters: missing " + e.name);
    const auto& p = params_.get(e.name);
    if (p.value.rows() != e.value.rows() || p.value.cols() != e.value.cols()) {
      throw std::invalid_argument("model parameters: shape mismatch for " + e.name);
    }
  }
}

// --- text fusion ----------------------------------------------------------------

namespace {

void check_dim(const TextEmbeddingSeq& s, std::size_t d_text, const char* what) {
  if (s.length() > 0 && s.dim != d_text) {
    throw std::invalid_argument(std::string(what) + " embedding has dimension " + std::to_string(s.dim) +
                                ", model expects " + std::to_string(d_text));
  }
}

template <class T>
Var param(Tape<T>& tape, const FlareModel<T>& m, const std::string& name) {
  return tape.param(m.params().get(name));
}

template <class T>
Var dense(Tape<T>& tape, const FlareModel<T>& m, const std::string& prefix, Var x) {
  return ag::linear(tape, x, param(tape, m, prefix + ".w"), param(tape, m, prefix + ".b"));
}

}  // namespace

template <class T>
Var text_vectors(Tape<T>& tape, const FlareModel<T>& model, std::span<const FuseRequest> requests) {
  const auto& cfg = model.config();
  const auto d_text = cfg.d_text;
  std::vector<std::size_t> lengths;
  lengths.reserve(requests.size());
  std::size_t total = 0;
  for (const auto& r : requests) {
    std::size_t n = 0;
    if (r.critique) {
      check_dim(*r.critique, d_text, "critique");
      n += r.critique->length();
    }
    if (r.mask_text) {
      n += 1;
    } else if (r.text) {
      check_dim(*r.text, d_text, "item text");
      n += r.text->length();
    }
    lengths.push_back(n);
    total += n;
  }

  // Raw encoder rows plus a per-row type selector: 0 text, 1 critique, 2 the
  // text mask stand-in (whose raw row is zero).
  Matrix<T> raw = Matrix<T>::Zero(ix(total), ix(d_text));
  std::vector<std::int64_t> type(total);
  std::size_t row = 0;
  auto copy_rows = [&](const TextEmbeddingSeq& s, std::int64_t kind) {
    for (std::size_t i = 0; i < s.length(); ++i, ++row) {
      const auto src = s.row(i);
      for (std::size_t c = 0; c < d_text; ++c) raw(ix(row), ix(c)) = static_cast<T>(src[c]);
      type[row] = kind;
    }
  };
  for (const auto& r : requests) {
    if (r.critique) copy_rows(*r.critique, 1);
    if (r.mask_text) {
      type[row++] = 2;
    } else if (r.text) {
      copy_rows(*r.text, 0);
    }
  }

  const Var kinds[] = {param(tape, model, pname::kTypeText), param(tape, model, pname::kTypeCritique),
                       param(tape, model, pname::kTextMask)};
  Var table = ag::concat_rows(tape, std::span<const Var>(kinds));
  Var x = ag::add(tape, tape.constant(std::move(raw)), ag::gather_rows(tape, table, std::span<const std::int64_t>(type)));
  Var projected = dense(tape, model, pname::kTextInput, x);

  Var pooled;
  if (cfg.reducer == TextReducer::Perceiver) {
    Var latents = perceiver_resample(tape, model.params(), cfg.perceiver, pname::kPerceiver, projected,
                                     std::span<const std::size_t>(lengths));
    std::vector<std::size_t> per(requests.size(), cfg.perceiver.n_latents);
    pooled = ag::segment_mean(tape, latents, std::span<const std::size_t>(per));
  } else {
    pooled = ag::segment_mean(tape, projected, std::span<const std::size_t>(lengths));
  }
  // Bounds the text vector's scale; without it Adam grows the stacked text
  // projections until t swamps the ID and position embeddings. Its gain
  // starts at init_std so t starts at the embeddings' scale.
  pooled = ag::layer_norm(tape, pooled, param(tape, model, std::string(pname::kTextNorm) + ".g"),
                          param(tape, model, std::string(pname::kTextNorm) + ".b"));
  return dense(tape, model, pname::kOutputProjection, pooled);
}

template <class T>
Matrix<T> fuse_item(const FlareModel<T>& model, const Matrix<T>& e, const TextEmbeddingSeq& text,
                    const TextEmbeddingSeq* critique) {
  if (e.rows() != 1 || static_cast<std::size_t>(e.cols()) != model.config().transformer.d_model) {
    throw std::invalid_argument("fuse_item: e must be 1 x d_model");
  }
  Tape<T> tape(GradMode::Disabled);
  const FuseRequest req{&text, false, critique};
  Var t = text_vectors(tape, model, std::span<const FuseRequest>(&req, 1));
  return e + tape.value(t);
}

// --- masked item prediction ----------------------------------------------------------

template <class T>
MlmOutput<T> forward_mlm(Tape<T>& tape, const FlareModel<T>& model, std::span<const PackedBatch> packs,
                         FusionMode mode, const TextContext& text, bool want_pairs, bool allow_unlabelled) {
  const auto& cfg = model.config();
  const auto n_items = static_cast<ItemIndex>(cfg.n_items);
  const auto mask = model.mask_index();
  const bool use_text = mode != FusionMode::IdOnly;
  if (use_text && !text.items) throw std::invalid_argument("forward_mlm: text mode needs an embedding cache");
  if (mode == FusionMode::TextIdCritique && !text.encoder) {
    throw std::invalid_argument("forward_mlm: critique mode needs a text encoder");
  }

  std::vector<std::int64_t> tokens, positions, slot_rows;
  std::vector<std::int32_t> segments;
  MlmOutput<T> out;
  std::vector<const MaskSlot*> slots;
  std::int32_t segment_base = 0;
  for (const auto& pack : packs) {
    const auto base = tokens.size();
    std::int32_t max_seg = -1;
    for (auto seg : pack.segment_ids) max_seg = std::max(max_seg, seg);
    // Positions are right-aligned: the last token of every sequence uses the
    // final position embedding, so a query's mask sits where training's last
    // tokens did regardless of history length.
    std::vector<std::size_t> seg_len(static_cast<std::size_t>(max_seg + 1), 0);
    for (auto seg : pack.segment_ids) ++seg_len[static_cast<std::size_t>(seg)];
    for (std::size_t i = 0; i < pack.size(); ++i) {
      const auto tok = pack.flat_inputs[i];
      if (tok < 0 || tok > mask) throw std::invalid_argument("forward_mlm: token " + std::to_string(tok) + " out of range");
      const auto len = seg_len[static_cast<std::size_t>(pack.segment_ids[i])];
      if (len > cfg.transformer.max_positions) {
        throw std::invalid_argument("forward_mlm: sequence of length " + std::to_string(len) + " exceeds max_positions");
      }
      tokens.push_back(tok);
      positions.push_back(static_cast<std::int64_t>(cfg.transformer.max_positions - len) + pack.positions[i]);
      segments.push_back(segment_base + pack.segment_ids[i]);
    }
    segment_base += max_seg + 1;
    for (const auto& s : pack.mask_slots) {
      if (s.offset >= pack.size() || pack.flat_inputs[s.offset] != mask) {
        throw std::invalid_argument("forward_mlm: mask slot does not point at a masked token");
      }
      const bool labelled = s.label >= 0 && s.label < n_items;
      if (!labelled && !(allow_unlabelled && s.label == mask)) {
        throw std::invalid_argument("forward_mlm: mask slot without a valid label");
      }
      slot_rows.push_back(static_cast<std::int64_t>(base + s.offset));
      out.labels.push_back(labelled ? s.label : 0);
      slots.push_back(&s);
    }
  }
  if (slot_rows.empty()) throw std::invalid_argument("forward_mlm: no mask slots");

  const Var item_table = param(tape, model, pname::kItemEmbeddings);
  Var x = ag::gather_rows(tape, item_table, std::span<const std::int64_t>(tokens));

  std::vector<ItemIndex> unique_items;
  Var tvec;
  if (use_text) {
    for (auto tok : tokens) {
      if (tok != mask) unique_items.push_back(static_cast<ItemIndex>(tok));
    }
    std::sort(unique_items.begin(), unique_items.end());
    unique_items.erase(std::unique(unique_items.begin(), unique_items.end()), unique_items.end());

    std::vector<FuseRequest> requests;
    requests.reserve(unique_items.size() + slots.size());
    for (auto item : unique_items) requests.push_back({&text.items->at(item), false, nullptr});
    std::vector<TextEmbeddingSeq> critiques;
    std::vector<std::int64_t> slot_request;
    if (mode == FusionMode::TextIdCritique) {
      critiques.reserve(slots.size());
      for (const auto* s : slots) {
        if (s->critique) critiques.push_back(text.encoder->encode(*s->critique));
      }
      std::size_t c = 0;
      for (const auto* s : slots) {
        slot_request.push_back(static_cast<std::int64_t>(requests.size()));
        requests.push_back({nullptr, true, s->critique ? &critiques[c++] : nullptr});
      }
    }
    if (!requests.empty()) {
      tvec = text_vectors(tape, model, std::span<const FuseRequest>(requests));
      // Row of tvec added to each token; masked tokens take nothing unless a
      // critique-mode slot supplies its own fused vector.
      std::vector<std::int64_t> token_text(tokens.size(), -1);
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == mask) continue;
        const auto it = std::lower_bound(unique_items.begin(), unique_items.end(), static_cast<ItemIndex>(tokens[i]));
        token_text[i] = static_cast<std::int64_t>(it - unique_items.begin());
      }
      for (std::size_t k = 0; k < slot_request.size(); ++k) {
        token_text[static_cast<std::size_t>(slot_rows[k])] = slot_request[k];
      }
      x = ag::add(tape, x, ag::gather_rows(tape, tvec, std::span<const std::int64_t>(token_text)));
    }
  }

  x = ag::add(tape, x,
              ag::gather_rows(tape, param(tape, model, pname::kPositionEmbeddings),
                              std::span<const std::int64_t>(positions)));
  const auto attend = AttendMask::from_segments(segments, segments);
  Var h = transformer_forward(tape, model.params(), cfg.transformer, pname::kEncoder, x, attend);
  Var hs = ag::gather_rows(tape, h, std::span<const std::int64_t>(slot_rows));
  hs = ag::layer_norm(tape, hs, param(tape, model, std::string(pname::kFinalNorm) + ".g"),
                      param(tape, model, std::string(pname::kFinalNorm) + ".b"));
  Var items = ag::slice_rows(tape, item_table, 0, cfg.n_items);
  out.logits = ag::matmul_nt(tape, hs, items);

  if (want_pairs && use_text) {
    // Items seen only at masked positions get their text vectors from a
    // separate pass, so the MLM inputs above are computed exactly as they
    // would be without the pair loss.
    std::vector<ItemIndex> extra;
    for (const auto& pack : packs) {
      for (auto o : pack.flat_originals) {
        if (o >= 0 && o < n_items && !std::binary_search(unique_items.begin(), unique_items.end(), o)) {
          extra.push_back(o);
        }
      }
    }
    std::sort(extra.begin(), extra.end());
    extra.erase(std::unique(extra.begin(), extra.end()), extra.end());
    std::vector<Var> parts;
    if (!unique_items.empty()) parts.push_back(ag::slice_rows(tape, tvec, 0, unique_items.size()));
    if (!extra.empty()) {
      std::vector<FuseRequest> requests;
      for (auto item : extra) requests.push_back({&text.items->at(item), false, nullptr});
      parts.push_back(text_vectors(tape, model, std::span<const FuseRequest>(requests)));
    }
    if (!parts.empty()) {
      out.pair_items = unique_items;
      out.pair_items.insert(out.pair_items.end(), extra.begin(), extra.end());
      std::vector<std::int64_t> ids(out.pair_items.begin(), out.pair_items.end());
      out.pair_ids = ag::gather_rows(tape, item_table, std::span<const std::int64_t>(ids));
      out.pair_texts = parts.size() == 1 ? parts[0] : ag::concat_rows(tape, std::span<const Var>(parts));
    }
  }
  return out;
}

// --- losses ------------------------------------------------------------------------

template <class T>
Var loss_mlm(Tape<T>& tape, Var logits, std::span<const std::int64_t> labels, Reduction reduction) {
  return ag::cross_entropy(tape, logits, labels, reduction);
}

template <class T>
Var loss_contrastive(Tape<T>& tape, Var ids, Var texts, double tau, double margin) {
  const auto n = tape.value(ids).rows();
  if (n == 0) throw std::invalid_argument("loss_contrastive: no pairs");
  if (tape.value(texts).rows() != n) throw std::invalid_argument("loss_contrastive: ids and texts differ in length");
  if (!(tau > 0)) throw std::invalid_argument("loss_contrastive: tau must be positive");
  Var s = ag::scale(tape, ag::matmul_nt(tape, ids, texts), static_cast<T>(1.0 / tau));
  s = ag::add_diagonal(tape, s, static_cast<T>(-margin));
  std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
  std::iota(labels.begin(), labels.end(), std::int64_t{0});
  return ag::cross_entropy(tape, s, std::span<const std::int64_t>(labels), Reduction::Mean);
}

template <class T>
Var loss_total(Tape<T>& tape, Var l_mlm, Var l_c, double alpha) {
  if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("loss_total: alpha must lie in [0, 1]");
  return ag::add(tape, ag::scale(tape, l_mlm, static_cast<T>(alpha)), ag::scale(tape, l_c, static_cast<T>(1 - alpha)));
}

double loss_total(double l_mlm, double l_c, double alpha) {
  if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("loss_total: alpha must lie in [0, 1]");
  return alpha * l_mlm + (1 - alpha) * l_c;
}

double mlm_loss_value(const Matrix<double>& logits, std::span<const std::int64_t> labels) {
  Tape<double> tape(GradMode::Disabled);
  return tape.scalar(loss_mlm(tape, tape.constant(logits), labels));
}

double contrastive_loss_value(const Matrix<double>& ids, const Matrix<double>& texts, double tau, double margin) {
  Tape<double> tape(GradMode::Disabled);
  return tape.scalar(loss_contrastive(tape, tape.constant(ids), tape.constant(texts), tau, margin));
}

// --- inference ----------------------------------------------------------------------

template <class T>
Matrix<T> score_queries(const FlareModel<T>& model, std::span<const Query> queries, FusionMode mode,
                        const TextContext& text) {
  const auto& cfg = model.config();
  const auto n_items = static_cast<ItemIndex>(cfg.n_items);
  const auto keep = cfg.transformer.max_positions - 1;
  std::vector<MaskedSequence> seqs;
  seqs.reserve(queries.size());
  for (const auto& q : queries) {
    if (q.history.empty()) throw std::invalid_argument("score_queries: empty history");
    for (auto i : q.history) {
      if (i < 0 || i >= n_items) throw std::invalid_argument("score_queries: unknown item " + std::to_string(i));
    }
    const auto start = q.history.size() > keep ? q.history.size() - keep : 0;
    seqs.push_back(masked_query(std::span<const ItemIndex>(q.history).subspan(start), model.mask_index(),
                                mode == FusionMode::TextIdCritique ? q.critique : std::nullopt));
  }
  const auto packs = pack_batches(seqs, cfg.transformer.max_positions);
  Tape<T> tape(GradMode::Disabled);
  const auto out = forward_mlm(tape, model, std::span<const PackedBatch>(packs), mode, text, false, true);
  const auto& logits = tape.value(out.logits);
  Matrix<T> scores(ix(queries.size()), ix(cfg.n_items));
  Eigen::Index r = 0;
  for (const auto& pack : packs) {
    for (auto src : pack.sources) scores.row(ix(src)) = logits.row(r++);
  }
  return scores;
}

std::vector<ScoredItem> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<ItemIndex> order(scores.size());
  std::iota(order.begin(), order.end(), ItemIndex{0});
  k = std::min(k, order.size());
  auto better = [&](ItemIndex a, ItemIndex b) {
    const auto sa = scores[static_cast<std::size_t>(a)];
    const auto sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  std::vector<ScoredItem> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({order[i], scores[static_cast<std::size_t>(order[i])]});
  return out;
}

template <class T>
std::vector<ScoredItem> predict_topk(const FlareModel<T>& model, std::span<const ItemIndex> history,
                                     const std::optional<std::string>& critique, std::size_t k, FusionMode mode,
                                     const TextContext& text) {
  if (k == 0) throw std::invalid_argument("predict_topk: k must be at least 1");
  const Query q{std::vector<ItemIndex>(history.begin(), history.end()), critique};
  const auto scores = score_queries(model, std::span<const Query>(&q, 1), mode, text);
  std::vector<double> row(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index i = 0; i < scores.cols(); ++i) row[static_cast<std::size_t>(i)] = static_cast<double>(scores(0, i));
  return top_k(row, k);
}

#define FLARE_INSTANTIATE_MODEL(T)                                                                               \
  template class FlareModel<T>;                                                                                  \
  template Var text_vectors<T>(Tape<T>&, const FlareModel<T>&, std::span<const FuseRequest>);                    \
  template Matrix<T> fuse_item<T>(const FlareModel<T>&, const Matrix<T>&, const TextEmbeddingSeq&,               \
                                  const TextEmbeddingSeq*);                                                      \
  template MlmOutput<T> forward_mlm<T>(Tape<T>&, const FlareModel<T>&, std::span<const PackedBatch>, FusionMode, \
                                       const TextContext&, bool, bool);                                          \
  template Var loss_mlm<T>(Tape<T>&, Var, std::span<const std::int64_t>, Reduction);                             \
  template Var loss_contrastive<T>(Tape<T>&, Var, Var, double, double);                                          \
  template Var loss_total<T>(Tape<T>&, Var, Var, double);                                                        \
  template Matrix<T> score_queries<T>(const FlareModel<T>&, std::span<const Query>, FusionMode,                  \
                                      const TextContext&);                                                       \
  template std::vector<ScoredItem> predict_topk<T>(const FlareModel<T>&, std::span<const ItemIndex>,             \
                                                   const std::optional<std::string>&, std::size_t, FusionMode,   \
                                                   const TextContext&);

FLARE_INSTANTIATE_MODEL(float)
FLARE_INSTANTIATE_MODEL(double)

#undef FLARE_INSTANTIATE_MODEL

}  // namespace flare
