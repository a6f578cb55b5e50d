#include <doctest.h>

#include <cmath>
#include <vector>

#include "flare/gradcheck.hpp"
#include "flare/model.hpp"
#include "flare/rng.hpp"

using namespace flare;

namespace {

ModelConfig toy_config(std::size_t n_items = 10, std::size_t d_text = 8) {
  ModelConfig c;
  c.n_items = n_items;
  c.transformer = {2, 2, 16, 32, 16};
  c.perceiver = {2, 2, 1, 16, 0};
  c.d_text = d_text;
  c.init_std = 0.3;
  return c;
}

ItemVocab toy_vocab(std::size_t n) {
  ItemVocab v;
  for (std::size_t i = 0; i < n; ++i) {
    Item it;
    it.item_id = "i" + std::to_string(i);
    it.title = "product " + std::to_string(i);
    it.categories = {"c" + std::to_string(i % 2), "c" + std::to_string(i % 2) + "s" + std::to_string(i % 3)};
    v.add(std::move(it));
  }
  return v;
}

struct Fixture {
  HashingEncoder encoder{64, 8, 17};
  ItemVocab vocab = toy_vocab(10);
  EmbeddingCache cache = EmbeddingCache::build(vocab, encoder);
  TextContext ctx{&cache, &encoder};
};

std::vector<PackedBatch> one_pack(const std::vector<ItemIndex>& inputs, const std::vector<std::size_t>& masked,
                                  ItemIndex mask, std::optional<std::string> critique = std::nullopt) {
  MaskedSequence m;
  m.originals = inputs;
  m.inputs = inputs;
  for (auto p : masked) {
    m.masked_positions.push_back(p);
    m.labels.push_back(inputs[p]);
    m.inputs[p] = mask;
    m.critiques.push_back(critique);
  }
  return pack_batches(std::vector<MaskedSequence>{m}, 16);
}

}  // namespace

TEST_CASE("full loss gradient matches finite differences on a toy model") {
  const auto rep = model_grad_check();
  INFO("max rel err " << rep.max_rel_err);
  CHECK(rep.passed());
  CHECK(rep.tensors.size() == FlareModel<double>(toy_config(), 21).params().size());
  for (const auto& e : rep.tensors) {
    INFO(e.name << " rel " << e.max_rel_err << " abs " << e.max_abs_err);
    CHECK(e.max_rel_err <= 1e-4);
    CHECK(e.count > 0);
  }
}

TEST_CASE("contrastive loss hand-computed cases") {
  Matrix<double> e(2, 2), t(2, 2);
  e << std::sqrt(2.0), 0, 0, std::sqrt(2.0);
  t = e;
  CHECK(contrastive_loss_value(e, t, 1.0, 0.0) == doctest::Approx(-std::log(std::exp(2.0) / (std::exp(2.0) + 1))));
  CHECK(contrastive_loss_value(e.topRows(1), t.topRows(1), 0.3, 0.2) == 0.0);
  CHECK(contrastive_loss_value(e, t, 0.3, 0.4) > contrastive_loss_value(e, t, 0.3, 0.2));
  CHECK_THROWS(contrastive_loss_value(Matrix<double>(0, 2), Matrix<double>(0, 2), 0.3, 0.2));
}

TEST_CASE("total loss weighting") {
  CHECK(loss_total(2.0, 4.0, 0.5) == 3.0);
  CHECK(loss_total(2.0, 4.0, 1.0) == 2.0);
  CHECK(loss_total(2.0, 4.0, 0.0) == 4.0);
  CHECK_THROWS(loss_total(2.0, 4.0, 1.5));
}

TEST_CASE("uniform logits give ln V") {
  Matrix<double> logits = Matrix<double>::Zero(3, 50);
  const std::vector<std::int64_t> labels{0, 7, 49};
  CHECK(mlm_loss_value(logits, labels) == doctest::Approx(std::log(50.0)));
}

TEST_CASE("logits appear only at masked slots and exclude specials") {
  Fixture fx;
  FlareModel<float> model(toy_config(), 2);
  const auto packs = one_pack({0, 1, 2, 3, 4}, {1, 3}, model.mask_index());
  Tape<float> t(GradMode::Disabled);
  auto out = forward_mlm(t, model, std::span<const PackedBatch>(packs), FusionMode::IdOnly, fx.ctx);
  CHECK(t.value(out.logits).rows() == 2);
  CHECK(t.value(out.logits).cols() == 10);
  CHECK(out.labels == std::vector<std::int64_t>{1, 3});
}

TEST_CASE("zeroed text path reproduces the id-only output bit for bit") {
  Fixture fx;
  FlareModel<float> model(toy_config(), 5);
  model.params().get(std::string(pname::kOutputProjection) + ".w").value.setZero();
  model.params().get(std::string(pname::kOutputProjection) + ".b").value.setZero();
  const auto packs = one_pack({0, 1, 2, 3, 4}, {2}, model.mask_index());
  Tape<float> a(GradMode::Disabled), b(GradMode::Disabled);
  const Matrix<float> id = a.value(forward_mlm(a, model, std::span<const PackedBatch>(packs), FusionMode::IdOnly, fx.ctx).logits);
  const Matrix<float> tx = b.value(forward_mlm(b, model, std::span<const PackedBatch>(packs), FusionMode::TextId, fx.ctx).logits);
  CHECK(id == tx);
}

TEST_CASE("critique visibility depends on mode") {
  Fixture fx;
  FlareModel<float> model(toy_config(), 6);
  const std::vector<ItemIndex> hist{1, 2, 3};
  auto scores = [&](FusionMode mode, std::optional<std::string> c) {
    const Query q{hist, std::move(c)};
    return score_queries(model, std::span<const Query>(&q, 1), mode, fx.ctx);
  };
  CHECK(scores(FusionMode::TextIdCritique, "c0") != scores(FusionMode::TextIdCritique, "c1 - c1s2"));
  CHECK(scores(FusionMode::TextId, "c0") == scores(FusionMode::TextId, "c1 - c1s2"));
  // An empty critique contributes no rows, so it equals no critique at all.
  CHECK(scores(FusionMode::TextIdCritique, std::string()) == scores(FusionMode::TextIdCritique, std::nullopt));
}

TEST_CASE("fuse_item reduces to e when the text path is zeroed") {
  Fixture fx;
  FlareModel<double> model(toy_config(), 8);
  model.params().get(std::string(pname::kOutputProjection) + ".w").value.setZero();
  Rng rng(1);
  const auto e = random_matrix<double>(rng, 1, 16, 1.0);
  CHECK(fuse_item(model, e, fx.cache.at(3)) == e);
  TextEmbeddingSeq bad{4, std::vector<float>(8, 1.0f)};
  CHECK_THROWS(fuse_item(model, e, bad));
}

TEST_CASE("top-k breaks ties by ascending index and clamps k") {
  const std::vector<double> s{0.5, 0.9, 0.5, 0.9, 0.1};
  const auto r = top_k(s, 10);
  REQUIRE(r.size() == 5);
  CHECK(r[0].item == 1);
  CHECK(r[1].item == 3);
  CHECK(r[2].item == 0);
  CHECK(r[3].item == 2);
  CHECK(r[4].item == 4);
}

TEST_CASE("predict_topk contract") {
  Fixture fx;
  FlareModel<float> model(toy_config(), 9);
  const std::vector<ItemIndex> hist{1, 2};
  const auto a = predict_topk(model, hist, std::nullopt, 50, FusionMode::TextId, fx.ctx);
  const auto b = predict_topk(model, hist, std::nullopt, 50, FusionMode::TextId, fx.ctx);
  CHECK(a.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].item == b[i].item);
    CHECK(a[i].score == b[i].score);
  }
  const std::vector<ItemIndex> bad{1, 12};
  CHECK_THROWS(predict_topk(model, bad, std::nullopt, 5, FusionMode::TextId, fx.ctx));
  const std::vector<ItemIndex> long_hist(40, 4);
  CHECK(predict_topk(model, long_hist, std::nullopt, 3, FusionMode::TextId, fx.ctx).size() == 3);
}

TEST_CASE("packed loss equals the sum of per-sequence losses") {
  Fixture fx;
  FlareModel<double> model(toy_config(), 10);
  Rng rng(12);
  std::vector<MaskedSequence> seqs;
  for (int s = 0; s < 5; ++s) {
    std::vector<ItemIndex> items;
    const auto len = 2 + rng.below(6);
    for (std::size_t i = 0; i < len; ++i) items.push_back(static_cast<ItemIndex>(rng.below(10)));
    seqs.push_back(mask_sequence(items, 0.3, rng, MaskMode::Bidirectional, model.mask_index()));
  }
  for (auto mode : {FusionMode::IdOnly, FusionMode::TextId}) {
    const auto packs = pack_batches(seqs, 16);
    Tape<double> t(GradMode::Disabled);
    auto out = forward_mlm(t, model, std::span<const PackedBatch>(packs), mode, fx.ctx);
    const double packed = t.scalar(loss_mlm(t, out.logits, out.labels, Reduction::Sum));
    double separate = 0;
    for (const auto& s : seqs) {
      const auto p = pack_batches(std::vector<MaskedSequence>{s}, 16);
      Tape<double> u(GradMode::Disabled);
      auto o = forward_mlm(u, model, std::span<const PackedBatch>(p), mode, fx.ctx);
      separate += u.scalar(loss_mlm(u, o.logits, o.labels, Reduction::Sum));
    }
    CHECK(std::abs(packed - separate) <= 1e-9 * std::abs(separate));
  }
}
