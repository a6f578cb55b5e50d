#include <doctest.h>

#include <cmath>
#include <vector>

#include "flare/autograd.hpp"
#include "flare/gradcheck.hpp"
#include "flare/nn.hpp"
#include "flare/rng.hpp"

using namespace flare;

namespace {

using Mat = Matrix<double>;

Mat random(Rng& rng, int r, int c, double sd = 1.0) { return random_matrix<double>(rng, r, c, sd); }

}  // namespace

TEST_CASE("quadratic loss gradient matches finite differences") {
  Rng rng(3);
  ParamStore<double> ps;
  ps.add("p", random(rng, 2, 3));
  LossFn<double> f = [](ParamStore<double>& s, bool with_grad) {
    Tape<double> t;
    Var p = t.param(s.get("p"));
    Var l = ag::matmul_nt(t, ag::slice_rows(t, p, 0, 1), ag::slice_rows(t, p, 0, 1));
    Var l2 = ag::matmul_nt(t, ag::slice_rows(t, p, 1, 1), ag::slice_rows(t, p, 1, 1));
    Var total = ag::add(t, l, l2);
    if (with_grad) t.backward(total);
    return t.scalar(total);
  };
  const auto rep = grad_check(f, ps, 1e-5, 1e-8);
  CHECK(rep.passed());
  for (Eigen::Index i = 0; i < 6; ++i) CHECK(ps.get("p").grad.data()[i] == doctest::Approx(2 * ps.get("p").value.data()[i]));
}

TEST_CASE("corrupted gradient is caught") {
  Rng rng(4);
  ParamStore<double> ps;
  ps.add("p", random(rng, 1, 4));
  LossFn<double> f = [](ParamStore<double>& s, bool with_grad) {
    Tape<double> t;
    Var p = t.param(s.get("p"));
    Var l = ag::matmul_nt(t, p, p);
    if (with_grad) {
      t.backward(l);
      s.get("p").grad *= 1.5;
    }
    return t.scalar(l);
  };
  CHECK_FALSE(grad_check(f, ps, 1e-5, 1e-4).passed());
}

TEST_CASE("every op differentiates correctly") {
  Rng rng(5);
  ParamStore<double> ps;
  ps.add("x", random(rng, 5, 4));
  ps.add("w", random(rng, 4, 4, 0.5));
  ps.add("b", random(rng, 1, 4, 0.1));
  ps.add("g", random(rng, 1, 4, 0.2).array() + 1.0);
  ps.add("kv", random(rng, 3, 4));
  const std::vector<std::int32_t> seg{0, 0, 1, 1, 1};
  const auto mask = AttendMask::from_segments(seg, seg);
  const std::vector<std::int64_t> labels{1, 3};
  const std::vector<std::int64_t> pick{4, -1, 0, 2};
  const std::vector<std::size_t> lens{2, 0, 3};
  LossFn<double> f = [&](ParamStore<double>& s, bool with_grad) {
    Tape<double> t;
    Var x = t.param(s.get("x"));
    Var w = t.param(s.get("w"));
    Var h = ag::layer_norm(t, ag::linear(t, x, w, t.param(s.get("b"))), t.param(s.get("g")), t.param(s.get("b")));
    h = ag::gelu(t, h);
    Var a = ag::attention(t, h, h, ag::matmul(t, h, w), 2, mask);
    Var kv = t.param(s.get("kv"));
    Var c = ag::attention(t, a, kv, kv, 2, AttendMask::full(5, 3));
    Var cat = ag::concat_rows(t, std::vector<Var>{c, kv});
    Var g = ag::gather_rows(t, cat, pick);
    Var m = ag::segment_mean(t, ag::slice_rows(t, cat, 1, 5), lens);
    Var logits = ag::add_diagonal(t, ag::scale(t, ag::matmul_nt(t, g, m), 0.7), -0.2);
    Var sel = ag::slice_rows(t, ag::add_row(t, ag::matmul(t, g, w), t.param(s.get("b"))), 0, 2);
    Var l1 = ag::cross_entropy(t, ag::slice_rows(t, logits, 0, 3), std::vector<std::int64_t>{0, 1, 2}, Reduction::Mean);
    Var l2 = ag::cross_entropy(t, sel, labels, Reduction::Sum);
    Var total = ag::add(t, l1, l2);
    if (with_grad) t.backward(total);
    return t.scalar(total);
  };
  const auto rep = grad_check(f, ps, 1e-6, 1e-6);
  INFO("max rel err " << rep.max_rel_err);
  CHECK(rep.passed());
}

TEST_CASE("attention rows are distributions over permitted keys only") {
  Rng rng(6);
  Tape<double> t(GradMode::Disabled);
  const std::vector<std::int32_t> seg{0, 1, 0, 2, 1};
  const auto mask = AttendMask::from_segments(seg, seg);
  CHECK_FALSE(mask.is_blocked());
  // Value rows are unit vectors, so the output row is the weight vector.
  Var q = t.constant(random(rng, 5, 5));
  Var k = t.constant(random(rng, 5, 5));
  Var v = t.constant(Mat::Identity(5, 5));
  const auto& w = t.value(ag::attention(t, q, k, v, 1, mask));
  for (int i = 0; i < 5; ++i) {
    CHECK(w.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (int j = 0; j < 5; ++j) {
      if (seg[i] != seg[j]) CHECK(w(i, j) == 0.0);
    }
  }
}

TEST_CASE("query with no permitted key yields a zero row") {
  Tape<double> t(GradMode::Disabled);
  auto mask = AttendMask::from_blocks(2, 2, {{0, 1, 0, 2}});
  Var q = t.constant(Mat::Ones(2, 2));
  const auto& out = t.value(ag::attention(t, q, q, q, 1, mask));
  CHECK(out.row(1).isZero(0));
  CHECK(out.row(0).isApprox(Mat::Ones(1, 2)));
}

TEST_CASE("zero-weight transformer is the identity") {
  Rng rng(7);
  TransformerConfig cfg{2, 2, 8, 16, 16};
  ParamStore<double> ps;
  init_transformer(ps, cfg, "enc", rng, 0.1);
  for (auto& p : ps) {
    if (p.name.find(".w") != std::string::npos) p.value.setZero();
  }
  Tape<double> t;
  const Mat x = random(rng, 6, 8);
  const auto& y = t.value(transformer_forward(t, ps, cfg, "enc", t.constant(x), AttendMask::full(6, 6)));
  CHECK(y == x);
}

TEST_CASE("identity relation makes positions independent") {
  Rng rng(8);
  TransformerConfig cfg{2, 2, 8, 16, 16};
  ParamStore<double> ps;
  init_transformer(ps, cfg, "enc", rng, 0.3);
  std::vector<std::int32_t> seg{0, 1, 2, 3};
  const auto mask = AttendMask::from_segments(seg, seg);
  Mat x = random(rng, 4, 8);
  Tape<double> t1(GradMode::Disabled);
  const Mat y1 = t1.value(transformer_forward(t1, ps, cfg, "enc", t1.constant(x), mask));
  x.row(2).array() += 1.0;
  Tape<double> t2(GradMode::Disabled);
  const Mat y2 = t2.value(transformer_forward(t2, ps, cfg, "enc", t2.constant(x), mask));
  CHECK(y1.row(0) == y2.row(0));
  CHECK(y1.row(1) == y2.row(1));
  CHECK(y1.row(3) == y2.row(3));
  CHECK_FALSE(y1.row(2) == y2.row(2));
}

TEST_CASE("swapping two packed segments swaps their outputs") {
  Rng rng(9);
  TransformerConfig cfg{1, 2, 8, 16, 16};
  ParamStore<double> ps;
  init_transformer(ps, cfg, "enc", rng, 0.3);
  const Mat a = random(rng, 3, 8), b = random(rng, 2, 8);
  Mat ab(5, 8), ba(5, 8);
  ab << a, b;
  ba << b, a;
  const std::vector<std::int32_t> s_ab{0, 0, 0, 1, 1}, s_ba{0, 0, 1, 1, 1};
  Tape<double> t(GradMode::Disabled);
  const Mat y_ab = t.value(transformer_forward(t, ps, cfg, "enc", t.constant(ab), AttendMask::from_segments(s_ab, s_ab)));
  const Mat y_ba = t.value(transformer_forward(t, ps, cfg, "enc", t.constant(ba), AttendMask::from_segments(s_ba, s_ba)));
  CHECK((y_ab.topRows(3) - y_ba.bottomRows(3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((y_ab.bottomRows(2) - y_ba.topRows(2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("perceiver output length is fixed and empty input is handled") {
  Rng rng(10);
  PerceiverConfig cfg{2, 2, 1, 8, 0};
  ParamStore<double> ps;
  init_perceiver(ps, cfg, "p", rng, 0.2);
  for (std::size_t n : {0u, 3u, 300u}) {
    Tape<double> t(GradMode::Disabled);
    const std::size_t lens[] = {n};
    const auto& y = t.value(perceiver_resample(t, ps, cfg, "p", t.constant(random(rng, static_cast<int>(n), 8)), lens));
    CHECK(y.rows() == 2);
    CHECK(y.cols() == 8);
  }
}

TEST_CASE("duplicating keys leaves cross-attention unchanged") {
  Rng rng(11);
  ParamStore<double> ps;
  init_attention_sublayer(ps, "x", 8, rng, 0.3, false);
  const Mat lat = random(rng, 2, 8), in = random(rng, 4, 8);
  Mat twice(8, 8);
  twice << in, in;
  Tape<double> t(GradMode::Disabled);
  const Mat y1 = t.value(attention_sublayer(t, ps, "x", t.constant(lat), t.constant(in), 2, AttendMask::full(2, 4), false));
  const Mat y2 = t.value(attention_sublayer(t, ps, "x", t.constant(lat), t.constant(twice), 2, AttendMask::full(2, 8), false));
  CHECK((y1 - y2).cwiseAbs().maxCoeff() < 1e-12);
}
