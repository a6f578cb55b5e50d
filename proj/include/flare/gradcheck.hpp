#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flare/tensor.hpp"

namespace flare {

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_abs_err = 0;
  double max_rel_err = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> tensors;
  double max_rel_err = 0;
  double tolerance = 0;
  bool passed() const { return max_rel_err <= tolerance; }
};

// Evaluates the loss at the store's current values. When `with_grad` is set
// it must also leave d(loss)/d(param) in every Parameter::grad.
template <class T>
using LossFn = std::function<T(ParamStore<T>&, bool with_grad)>;

// Central differences against the analytic gradient, entry by entry.
// Relative error of one entry is |a - n| / max(|a|, |n|, floor); the floor
// keeps entries that are analytically zero (key biases under softmax, say)
// from turning round-off into huge ratios.
template <class T>
GradCheckReport grad_check(const LossFn<T>& loss_fn, ParamStore<T>& params, double eps, double tolerance,
                           double floor = 1e-5) {
  auto checked = [](T v) {
    if (!std::isfinite(static_cast<double>(v))) throw std::runtime_error("grad_check: non-finite loss");
    return static_cast<double>(v);
  };
  params.zero_grad();
  checked(loss_fn(params, true));
  std::vector<Matrix<T>> analytic;
  for (const auto& p : params) analytic.push_back(p.grad);

  GradCheckReport report;
  report.tolerance = tolerance;
  std::size_t pi = 0;
  for (auto& p : params) {
    GradCheckEntry e{p.name, static_cast<std::size_t>(p.value.size())};
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const T orig = p.value.data()[i];
      p.value.data()[i] = orig + T(eps);
      const double up = checked(loss_fn(params, false));
      p.value.data()[i] = orig - T(eps);
      const double down = checked(loss_fn(params, false));
      p.value.data()[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = static_cast<double>(analytic[pi].data()[i]);
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      e.max_abs_err = std::max(e.max_abs_err, abs_err);
      e.max_rel_err = std::max(e.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    report.tensors.push_back(std::move(e));
    ++pi;
  }
  return report;
}

// The full training loss (MLM, contrastive and critique fusion together) on
// a toy double-precision model, so every parameter tensor carries gradient.
GradCheckReport model_grad_check(std::uint64_t seed = 21, double eps = 1e-5, double tolerance = 1e-4);

}  // namespace flare
