#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "entcap/autograd.hpp"

namespace entcap::test_support {

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

/// Five-point central differences against the analytic gradient for every trainable scalar whose name
/// starts with `prefix`. `loss(true)` must zero the gradients, run backward and return the
/// loss; `loss(false)` only evaluates. The relative error is |a - n| / max(|a|, |n|, floor);
/// the floor keeps gradients that are zero up to rounding from dividing by nothing.
inline GradCheck check_gradients(ag::ParameterStore& store, const std::function<double(bool)>& loss,
                                 const std::string& prefix = "", double h = 1e-4,
                                 double floor = 1e-6) {
  loss(true);
  GradCheck out;
  for (auto& p : store.all()) {
    if (!p.trainable || p.name.rfind(prefix, 0) != 0) continue;
    const ag::Matrix analytic = p.grad;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double saved = x;
      auto at = [&](double offset) {
        x = saved + offset;
        return loss(false);
      };
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      x = saved;
      const double a = analytic.data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_relative_error) {
        out.max_relative_error = rel;
        out.worst = p.name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace entcap::test_support
