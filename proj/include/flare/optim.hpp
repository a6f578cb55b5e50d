#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flare/tensor.hpp"

namespace flare {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: p -= lr * wd * p
};

// Adam with bias correction. Moment buffers are kept per parameter in
// registration order, so the optimiser must always see the same store.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(ParamStore<T>& store) {
    if (m_.empty()) {
      for (const auto& p : store) {
        m_.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
      }
    }
    if (m_.size() != store.size()) throw std::invalid_argument("adam: parameter count changed");
    ++t_;
    const T b1 = T(cfg_.beta1);
    const T b2 = T(cfg_.beta2);
    const T c1 = T(1) / (T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(t_))));
    const T c2 = T(1) / (T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(t_))));
    const T lr = T(cfg_.lr);
    const T eps = T(cfg_.eps);
    const T decay = T(cfg_.lr * cfg_.weight_decay);
    std::size_t i = 0;
    for (auto& p : store) {
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() ||
          m_[i].rows() != p.value.rows() || m_[i].cols() != p.value.cols()) {
        throw std::invalid_argument("adam: shape mismatch for " + p.name);
      }
      auto& m = m_[i];
      auto& v = v_[i];
      m = b1 * m + (T(1) - b1) * p.grad;
      v = b2 * v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
      const Matrix<T> update = ((m * c1).array() / ((v * c2).array().sqrt() + eps)).matrix();
      if (decay != T(0)) {
        p.value = p.value - lr * update - decay * p.value;
      } else {
        p.value -= lr * update;
      }
      ++i;
    }
  }

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Matrix<T>> m_;
  std::vector<Matrix<T>> v_;
};

}  // namespace flare
