#include "flare/autograd.hpp"

#include <cmath>
#include <memory>
#include <numeric>
#include <string>

namespace flare {

AttendMask AttendMask::full(std::size_t q, std::size_t k) { return from_blocks(q, k, {{0, q, 0, k}}); }

AttendMask AttendMask::from_blocks(std::size_t q, std::size_t k, std::vector<Block> blocks) {
  AttendMask m;
  m.rows_ = q;
  m.cols_ = k;
  std::vector<std::uint8_t> covered(q, 0);
  for (const auto& b : blocks) {
    if (b.q_begin > b.q_end || b.q_end > q || b.k_begin > b.k_end || b.k_end > k) {
      throw std::invalid_argument("AttendMask: block out of range");
    }
    for (auto r = b.q_begin; r < b.q_end; ++r) {
      if (covered[r]++) throw std::invalid_argument("AttendMask: overlapping query blocks");
    }
  }
  m.blocks_ = std::move(blocks);
  return m;
}

AttendMask AttendMask::from_dense(std::size_t q, std::size_t k, std::vector<std::uint8_t> allowed) {
  if (allowed.size() != q * k) throw std::invalid_argument("AttendMask: dense mask has wrong size");
  AttendMask m;
  m.rows_ = q;
  m.cols_ = k;
  m.blocked_ = false;
  m.dense_ = std::move(allowed);
  return m;
}

namespace {

// Contiguous runs of equal ids, or empty if some id occurs in two runs.
std::vector<std::pair<std::int32_t, std::pair<std::size_t, std::size_t>>> runs_of(std::span<const std::int32_t> ids) {
  std::vector<std::pair<std::int32_t, std::pair<std::size_t, std::size_t>>> runs;
  std::unordered_map<std::int32_t, int> seen;
  for (std::size_t i = 0; i < ids.size();) {
    std::size_t j = i;
    while (j < ids.size() && ids[j] == ids[i]) ++j;
    if (seen[ids[i]]++) return {};
    runs.push_back({ids[i], {i, j}});
    i = j;
  }
  return runs;
}

}  // namespace

AttendMask AttendMask::from_segments(std::span<const std::int32_t> q_segments,
                                     std::span<const std::int32_t> k_segments) {
  const auto q_runs = runs_of(q_segments);
  const auto k_runs = runs_of(k_segments);
  const bool contiguous = (q_runs.size() || q_segments.empty()) && (k_runs.size() || k_segments.empty());
  if (contiguous) {
    std::unordered_map<std::int32_t, std::pair<std::size_t, std::size_t>> k_range;
    for (const auto& [id, range] : k_runs) k_range[id] = range;
    std::vector<Block> blocks;
    for (const auto& [id, range] : q_runs) {
      auto it = k_range.find(id);
      if (it == k_range.end()) continue;  // no keys: row stays all-forbidden
      blocks.push_back({range.first, range.second, it->second.first, it->second.second});
    }
    return from_blocks(q_segments.size(), k_segments.size(), std::move(blocks));
  }
  std::vector<std::uint8_t> dense(q_segments.size() * k_segments.size());
  for (std::size_t a = 0; a < q_segments.size(); ++a) {
    for (std::size_t b = 0; b < k_segments.size(); ++b) {
      dense[a * k_segments.size() + b] = q_segments[a] == k_segments[b];
    }
  }
  return from_dense(q_segments.size(), k_segments.size(), std::move(dense));
}

bool AttendMask::allowed(std::size_t q, std::size_t k) const {
  if (!blocked_) return dense_[q * cols_ + k] != 0;
  for (const auto& b : blocks_) {
    if (q >= b.q_begin && q < b.q_end) return k >= b.k_begin && k < b.k_end;
  }
  return false;
}

namespace ag {

namespace {

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

std::string shape(long r, long c) { return std::to_string(r) + "x" + std::to_string(c); }

}  // namespace

template <class T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require(A.cols() == B.rows(), "matmul", shape(A.rows(), A.cols()) + " * " + shape(B.rows(), B.cols()));
  Matrix<T> C(A.rows(), B.cols());
  C.noalias() = A * B;
  return t.record(std::move(C), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
    if (t.requires_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
  });
}

template <class T>
Var matmul_nt(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require(A.cols() == B.cols(), "matmul_nt", shape(A.rows(), A.cols()) + " * " + shape(B.rows(), B.cols()) + "^T");
  Matrix<T> C(A.rows(), B.rows());
  C.noalias() = A * B.transpose();
  return t.record(std::move(C), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b);
    if (t.requires_grad(b)) t.grad(b).noalias() += g.transpose() * t.value(a);
  });
}

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(), "add",
          shape(A.rows(), A.cols()) + " + " + shape(B.rows(), B.cols()));
  Matrix<T> C = A + B;
  return t.record(std::move(C), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <class T>
Var add_row(Tape<T>& t, Var a, Var row) {
  const auto& A = t.value(a);
  const auto& R = t.value(row);
  require(R.rows() == 1 && R.cols() == A.cols(), "add_row",
          shape(A.rows(), A.cols()) + " + row " + shape(R.rows(), R.cols()));
  Matrix<T> C = A.rowwise() + R.row(0);
  return t.record(std::move(C), {a, row}, [a, row](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.grad(row) += g.colwise().sum();
  });
}

template <class T>
Var scale(Tape<T>& t, Var a, T s) {
  Matrix<T> C = t.value(a) * s;
  return t.record(std::move(C), {a}, [a, s](Tape<T>& t, const Matrix<T>& g) { t.accumulate(a, g * s); });
}

template <class T>
Var add_diagonal(Tape<T>& t, Var a, T c) {
  Matrix<T> C = t.value(a);
  const auto n = std::min(C.rows(), C.cols());
  for (Eigen::Index i = 0; i < n; ++i) C(i, i) += c;
  return t.record(std::move(C), {a}, [a](Tape<T>& t, const Matrix<T>& g) { t.accumulate(a, g); });
}

template <class T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  return add_row(t, matmul(t, x, w), b);
}

template <class T>
Var layer_norm(Tape<T>& t, Var x, Var gain, Var bias, T eps) {
  const auto& X = t.value(x);
  const auto& G = t.value(gain);
  const auto& B = t.value(bias);
  const auto n = X.cols();
  require(G.rows() == 1 && G.cols() == n && B.rows() == 1 && B.cols() == n, "layer_norm", "gain/bias shape");
  Matrix<T> xhat(X.rows(), n);
  std::vector<T> rstd(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const T mean = X.row(r).mean();
    const T var = (X.row(r).array() - mean).square().mean();
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    xhat.row(r) = (X.row(r).array() - mean) * rs;
  }
  Matrix<T> Y = (xhat.array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
  return t.record(std::move(Y), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, const Matrix<T>& g) {
                    if (t.requires_grad(gain)) t.grad(gain) += (g.array() * xhat.array()).matrix().colwise().sum();
                    if (t.requires_grad(bias)) t.grad(bias) += g.colwise().sum();
                    if (!t.requires_grad(x)) return;
                    const auto& G = t.value(gain);
                    auto& dx = t.grad(x);
                    for (Eigen::Index r = 0; r < g.rows(); ++r) {
                      const auto dxhat = (g.row(r).array() * G.row(0).array()).eval();
                      const T m1 = dxhat.mean();
                      const T m2 = (dxhat * xhat.row(r).array()).mean();
                      dx.row(r).array() +=
                          (dxhat - m1 - xhat.row(r).array() * m2) * rstd[static_cast<std::size_t>(r)];
                    }
                  });
}

template <class T>
Var gelu(Tape<T>& t, Var x) {
  const auto& X = t.value(x);
  const T inv_sqrt2 = T(0.70710678118654752440);
  Matrix<T> Y = X.unaryExpr([inv_sqrt2](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); });
  return t.record(std::move(Y), {x}, [x, inv_sqrt2](Tape<T>& t, const Matrix<T>& g) {
    const T inv_sqrt_2pi = T(0.39894228040143267794);
    Matrix<T> d = t.value(x).unaryExpr([&](T v) {
      return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
    });
    t.accumulate(x, (g.array() * d.array()).matrix());
  });
}

namespace {

// In-place row softmax restricted to allowed entries; rows with no allowed
// entry become all zeros.
template <class T, class Allowed>
void masked_softmax(Matrix<T>& S, Allowed allowed) {
  for (Eigen::Index r = 0; r < S.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index c = 0; c < S.cols(); ++c) {
      if (allowed(r, c)) mx = std::max(mx, S(r, c));
    }
    if (mx == -std::numeric_limits<T>::infinity()) {
      S.row(r).setZero();
      continue;
    }
    T sum = 0;
    for (Eigen::Index c = 0; c < S.cols(); ++c) {
      if (allowed(r, c)) {
        S(r, c) = std::exp(S(r, c) - mx);
        sum += S(r, c);
      } else {
        S(r, c) = 0;
      }
    }
    S.row(r) /= sum;
  }
}

// Backward of one (query block, key block, head) attention tile.
template <class T, class GBlock, class QBlock, class KBlock, class VBlock>
void attention_tile_backward(const Matrix<T>& P, const GBlock& dO, const QBlock& Q, const KBlock& K,
                             const VBlock& V, T scale, Matrix<T>* dQ, Matrix<T>* dK, Matrix<T>* dV,
                             Eigen::Index q0, Eigen::Index k0, Eigen::Index c0) {
  const auto dh = Q.cols();
  if (dV) dV->block(k0, c0, V.rows(), dh).noalias() += P.transpose() * dO;
  if (!dQ && !dK) return;
  Matrix<T> dP = dO * V.transpose();
  const auto rowdot = (dP.array() * P.array()).rowwise().sum().eval();
  Matrix<T> dS = (P.array() * (dP.array().colwise() - rowdot)).matrix();
  if (dQ) dQ->block(q0, c0, Q.rows(), dh).noalias() += (dS * K) * scale;
  if (dK) dK->block(k0, c0, K.rows(), dh).noalias() += (dS.transpose() * Q) * scale;
}

}  // namespace

template <class T>
Var attention(Tape<T>& t, Var q, Var k, Var v, std::size_t n_heads, const AttendMask& mask) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& V = t.value(v);
  const auto d = Q.cols();
  require(n_heads > 0 && d % static_cast<Eigen::Index>(n_heads) == 0, "attention", "width not divisible by heads");
  require(K.cols() == d && V.cols() == d && K.rows() == V.rows(), "attention", "q/k/v shape mismatch");
  require(static_cast<std::size_t>(Q.rows()) == mask.rows() && static_cast<std::size_t>(K.rows()) == mask.cols(),
          "attention", "mask shape mismatch");
  const auto dh = d / static_cast<Eigen::Index>(n_heads);
  const T sc = T(1) / std::sqrt(T(dh));
  const auto heads = static_cast<Eigen::Index>(n_heads);

  Matrix<T> out = Matrix<T>::Zero(Q.rows(), d);
  auto probs = std::make_shared<std::vector<Matrix<T>>>();
  auto m = std::make_shared<AttendMask>(mask);

  if (m->is_blocked()) {
    for (const auto& b : m->blocks()) {
      const auto nq = static_cast<Eigen::Index>(b.q_end - b.q_begin);
      const auto nk = static_cast<Eigen::Index>(b.k_end - b.k_begin);
      if (nq == 0 || nk == 0) continue;
      const auto q0 = static_cast<Eigen::Index>(b.q_begin);
      const auto k0 = static_cast<Eigen::Index>(b.k_begin);
      for (Eigen::Index h = 0; h < heads; ++h) {
        Matrix<T> S = (Q.block(q0, h * dh, nq, dh) * K.block(k0, h * dh, nk, dh).transpose()) * sc;
        masked_softmax(S, [](Eigen::Index, Eigen::Index) { return true; });
        out.block(q0, h * dh, nq, dh).noalias() = S * V.block(k0, h * dh, nk, dh);
        probs->push_back(std::move(S));
      }
    }
  } else {
    for (Eigen::Index h = 0; h < heads; ++h) {
      Matrix<T> S = (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * sc;
      masked_softmax(S, [&](Eigen::Index r, Eigen::Index c) {
        return m->allowed(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      });
      out.middleCols(h * dh, dh).noalias() = S * V.middleCols(h * dh, dh);
      probs->push_back(std::move(S));
    }
  }

  return t.record(std::move(out), {q, k, v}, [q, k, v, heads, dh, sc, probs, m](Tape<T>& t, const Matrix<T>& g) {
    const auto& Q = t.value(q);
    const auto& K = t.value(k);
    const auto& V = t.value(v);
    Matrix<T>* dQ = t.requires_grad(q) ? &t.grad(q) : nullptr;
    Matrix<T>* dK = t.requires_grad(k) ? &t.grad(k) : nullptr;
    Matrix<T>* dV = t.requires_grad(v) ? &t.grad(v) : nullptr;
    std::size_t idx = 0;
    if (m->is_blocked()) {
      for (const auto& b : m->blocks()) {
        const auto nq = static_cast<Eigen::Index>(b.q_end - b.q_begin);
        const auto nk = static_cast<Eigen::Index>(b.k_end - b.k_begin);
        if (nq == 0 || nk == 0) continue;
        const auto q0 = static_cast<Eigen::Index>(b.q_begin);
        const auto k0 = static_cast<Eigen::Index>(b.k_begin);
        for (Eigen::Index h = 0; h < heads; ++h) {
          attention_tile_backward<T>((*probs)[idx++], g.block(q0, h * dh, nq, dh), Q.block(q0, h * dh, nq, dh),
                                     K.block(k0, h * dh, nk, dh), V.block(k0, h * dh, nk, dh), sc, dQ, dK, dV, q0,
                                     k0, h * dh);
        }
      }
    } else {
      for (Eigen::Index h = 0; h < heads; ++h) {
        attention_tile_backward<T>((*probs)[idx++], g.middleCols(h * dh, dh), Q.middleCols(h * dh, dh),
                                   K.middleCols(h * dh, dh), V.middleCols(h * dh, dh), sc, dQ, dK, dV, 0, 0, h * dh);
      }
    }
  });
}

template <class T>
Var gather_rows(Tape<T>& t, Var src, std::span<const std::int64_t> indices) {
  const auto& S = t.value(src);
  Matrix<T> out = Matrix<T>::Zero(static_cast<Eigen::Index>(indices.size()), S.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto idx = indices[i];
    if (idx < 0) continue;
    require(idx < S.rows(), "gather_rows", "index " + std::to_string(idx) + " >= " + std::to_string(S.rows()));
    out.row(static_cast<Eigen::Index>(i)) = S.row(idx);
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return t.record(std::move(out), {src}, [src, idx = std::move(idx)](Tape<T>& t, const Matrix<T>& g) {
    auto& d = t.grad(src);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= 0) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    }
  });
}

template <class T>
Var concat_rows(Tape<T>& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  const auto cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (auto p : parts) {
    require(t.value(p).cols() == cols, "concat_rows", "column mismatch");
    rows += t.value(p).rows();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index r = 0;
  for (auto p : parts) {
    const auto& P = t.value(p);
    out.middleRows(r, P.rows()) = P;
    r += P.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [inputs](Tape<T>& t, const Matrix<T>& g) {
    Eigen::Index r = 0;
    for (auto p : inputs) {
      const auto n = t.value(p).rows();
      if (t.requires_grad(p) && n > 0) t.grad(p) += g.middleRows(r, n);
      r += n;
    }
  });
}

template <class T>
Var slice_rows(Tape<T>& t, Var x, std::size_t begin, std::size_t count) {
  const auto& X = t.value(x);
  require(begin + count <= static_cast<std::size_t>(X.rows()), "slice_rows", "range out of bounds");
  const auto b = static_cast<Eigen::Index>(begin);
  const auto n = static_cast<Eigen::Index>(count);
  Matrix<T> out = X.middleRows(b, n);
  return t.record(std::move(out), {x}, [x, b, n](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(x) && n > 0) t.grad(x).middleRows(b, n) += g;
  });
}

template <class T>
Var segment_mean(Tape<T>& t, Var x, std::span<const std::size_t> lengths) {
  const auto& X = t.value(x);
  const auto total = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
  require(total == static_cast<std::size_t>(X.rows()), "segment_mean", "lengths do not cover the input");
  Matrix<T> out = Matrix<T>::Zero(static_cast<Eigen::Index>(lengths.size()), X.cols());
  Eigen::Index r = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    const auto n = static_cast<Eigen::Index>(lengths[s]);
    if (n > 0) out.row(static_cast<Eigen::Index>(s)) = X.middleRows(r, n).colwise().sum() / T(n);
    r += n;
  }
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  return t.record(std::move(out), {x}, [x, lens = std::move(lens)](Tape<T>& t, const Matrix<T>& g) {
    auto& d = t.grad(x);
    Eigen::Index r = 0;
    for (std::size_t s = 0; s < lens.size(); ++s) {
      const auto n = static_cast<Eigen::Index>(lens[s]);
      for (Eigen::Index i = 0; i < n; ++i) d.row(r + i) += g.row(static_cast<Eigen::Index>(s)) / T(n);
      r += n;
    }
  });
}

template <class T>
Var cross_entropy(Tape<T>& t, Var logits, std::span<const std::int64_t> labels, Reduction reduction) {
  const auto& L = t.value(logits);
  require(static_cast<std::size_t>(L.rows()) == labels.size(), "cross_entropy", "one label per row required");
  require(L.rows() > 0 || reduction == Reduction::Sum, "cross_entropy", "mean over zero rows");
  Matrix<T> probs(L.rows(), L.cols());
  T total = 0;
  for (Eigen::Index r = 0; r < L.rows(); ++r) {
    const auto label = labels[static_cast<std::size_t>(r)];
    require(label >= 0 && label < L.cols(), "cross_entropy", "label out of range");
    const T mx = L.row(r).maxCoeff();
    probs.row(r) = (L.row(r).array() - mx).exp();
    const T sum = probs.row(r).sum();
    probs.row(r) /= sum;
    total += (mx + std::log(sum)) - L(r, label);
  }
  const T factor = reduction == Reduction::Mean ? T(1) / T(L.rows()) : T(1);
  Matrix<T> out(1, 1);
  out(0, 0) = total * factor;
  std::vector<std::int64_t> lab(labels.begin(), labels.end());
  return t.record(std::move(out), {logits},
                  [logits, lab = std::move(lab), probs = std::move(probs), factor](Tape<T>& t, const Matrix<T>& g) {
                    Matrix<T> d = probs;
                    for (std::size_t r = 0; r < lab.size(); ++r) d(static_cast<Eigen::Index>(r), lab[r]) -= T(1);
                    t.accumulate(logits, d * (g(0, 0) * factor));
                  });
}

#define FLARE_INSTANTIATE_OPS(T)                                                                   \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                      \
  template Var matmul_nt<T>(Tape<T>&, Var, Var);                                                   \
  template Var add<T>(Tape<T>&, Var, Var);                                                         \
  template Var add_row<T>(Tape<T>&, Var, Var);                                                     \
  template Var scale<T>(Tape<T>&, Var, T);                                                         \
  template Var add_diagonal<T>(Tape<T>&, Var, T);                                                  \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                                 \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var, T);                                          \
  template Var gelu<T>(Tape<T>&, Var);                                                             \
  template Var attention<T>(Tape<T>&, Var, Var, Var, std::size_t, const AttendMask&);              \
  template Var gather_rows<T>(Tape<T>&, Var, std::span<const std::int64_t>);                       \
  template Var concat_rows<T>(Tape<T>&, std::span<const Var>);                                     \
  template Var slice_rows<T>(Tape<T>&, Var, std::size_t, std::size_t);                             \
  template Var segment_mean<T>(Tape<T>&, Var, std::span<const std::size_t>);                       \
  template Var cross_entropy<T>(Tape<T>&, Var, std::span<const std::int64_t>, Reduction);

FLARE_INSTANTIATE_OPS(float)
FLARE_INSTANTIATE_OPS(double)

#undef FLARE_INSTANTIATE_OPS

}  // namespace ag
}  // namespace flare
