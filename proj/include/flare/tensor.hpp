#pragma once

#include <cstddef>
#include <deque>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace flare {

// All tensors in the model are rank-2 and row-major; vectors are 1 x n.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  // Scratch accumulator for d(loss)/d(value); not part of the logical state.
  mutable Matrix<T> grad;
};

// Named learnable tensors in registration order. References returned by
// add()/get() stay valid for the store's lifetime.
template <class T>
class ParamStore {
 public:
  Parameter<T>& add(std::string name, Matrix<T> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_.emplace(name, params_.size());
    auto& p = params_.emplace_back();
    p.name = std::move(name);
    p.grad = Matrix<T>::Zero(init.rows(), init.cols());
    p.value = std::move(init);
    return p;
  }

  Parameter<T>& get(std::string_view name) { return params_[lookup(name)]; }
  const Parameter<T>& get(std::string_view name) const { return params_[lookup(name)]; }
  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  void zero_grad() const {
    for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
    return out;
  }

 private:
  std::size_t lookup(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + std::string(name));
    return it->second;
  }

  std::deque<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace flare
