#pragma once

// Reverse-mode automatic differentiation over row-major matrices.
//
// A Tape records every operation of one forward pass. Each recorded node owns
// its value and a closure that pushes the node's gradient to its inputs.
// Parameters enter the tape by reference and accumulate straight into
// Parameter::grad.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "flare/tensor.hpp"

namespace flare {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

enum class GradMode { Enabled, Disabled };

template <class T>
class Tape {
 public:
  using Mat = Matrix<T>;
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  explicit Tape(GradMode mode = GradMode::Enabled) : mode_(mode) {}

  GradMode mode() const { return mode_; }

  Var constant(Mat value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  // With gradients disabled the parameter enters as a read-only constant,
  // so concurrent inference passes never touch shared state.
  Var param(const Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return it->second;
    Node n;
    n.external = &p.value;
    if (mode_ == GradMode::Enabled) {
      n.external_grad = &p.grad;
      n.requires_grad = true;
    }
    nodes_.push_back(std::move(n));
    Var v{nodes_.size() - 1};
    param_nodes_.emplace(&p, v);
    return v;
  }

  Var record(Mat value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var record(Mat value, std::span<const Var> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    for (auto in : inputs) n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Mat& value(Var v) const {
    const auto& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  Mat& grad(Var v) {
    auto& n = nodes_[v.id];
    if (n.external_grad) return *n.external_grad;
    const auto& val = value(v);
    if (n.grad.rows() != val.rows() || n.grad.cols() != val.cols()) n.grad = Mat::Zero(val.rows(), val.cols());
    return n.grad;
  }

  // Adds `delta` into the gradient of v when v participates in differentiation.
  template <class Expr>
  void accumulate(Var v, const Expr& delta) {
    if (!nodes_[v.id].requires_grad) return;
    grad(v) += delta;
  }

  void backward(Var root) {
    const auto& r = value(root);
    if (r.rows() != 1 || r.cols() != 1) throw std::invalid_argument("backward: root must be a scalar");
    grad(root).setConstant(T(1));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !n.backward) continue;
      if (n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  T scalar(Var v) const { return value(v)(0, 0); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat* external_grad = nullptr;
    Mat grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  GradMode mode_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, Var> param_nodes_;
};

// Which key rows each query row may attend to. Block form covers the common
// case of disjoint contiguous segments; dense form holds any relation.
class AttendMask {
 public:
  struct Block {
    std::size_t q_begin, q_end, k_begin, k_end;
  };

  static AttendMask full(std::size_t q, std::size_t k);
  static AttendMask from_blocks(std::size_t q, std::size_t k, std::vector<Block> blocks);
  static AttendMask from_dense(std::size_t q, std::size_t k, std::vector<std::uint8_t> allowed);
  // a may attend b iff q_segments[a] == k_segments[b].
  static AttendMask from_segments(std::span<const std::int32_t> q_segments, std::span<const std::int32_t> k_segments);

  bool allowed(std::size_t q, std::size_t k) const;
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool is_blocked() const { return blocked_; }
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  bool blocked_ = true;
  std::vector<Block> blocks_;
  std::vector<std::uint8_t> dense_;
};

enum class Reduction { Mean, Sum };

namespace ag {

template <class T> Var matmul(Tape<T>& t, Var a, Var b);
// a * b^T
template <class T> Var matmul_nt(Tape<T>& t, Var a, Var b);
template <class T> Var add(Tape<T>& t, Var a, Var b);
// Adds a 1 x n row to every row of a.
template <class T> Var add_row(Tape<T>& t, Var a, Var row);
template <class T> Var scale(Tape<T>& t, Var a, T s);
// Adds c to every diagonal entry.
template <class T> Var add_diagonal(Tape<T>& t, Var a, T c);
// x * W + b with W stored in x out.
template <class T> Var linear(Tape<T>& t, Var x, Var w, Var b);
template <class T> Var layer_norm(Tape<T>& t, Var x, Var gain, Var bias, T eps = T(1e-5));
// Exact (erf) GELU.
template <class T> Var gelu(Tape<T>& t, Var x);
// Scaled dot-product attention on already projected q/k/v, split into
// n_heads column groups. Forbidden pairs get exactly zero weight; a query
// row with no permitted key produces a zero row.
template <class T> Var attention(Tape<T>& t, Var q, Var k, Var v, std::size_t n_heads, const AttendMask& mask);
// out[i] = src[indices[i]], or a zero row where indices[i] < 0.
template <class T> Var gather_rows(Tape<T>& t, Var src, std::span<const std::int64_t> indices);
template <class T> Var concat_rows(Tape<T>& t, std::span<const Var> parts);
template <class T> Var slice_rows(Tape<T>& t, Var x, std::size_t begin, std::size_t count);
// Mean over consecutive row groups of the given lengths; an empty group
// yields a zero row.
template <class T> Var segment_mean(Tape<T>& t, Var x, std::span<const std::size_t> lengths);
// Softmax cross-entropy of each row against its label, reduced to 1 x 1.
template <class T> Var cross_entropy(Tape<T>& t, Var logits, std::span<const std::int64_t> labels, Reduction r);

}  // namespace ag
}  // namespace flare
