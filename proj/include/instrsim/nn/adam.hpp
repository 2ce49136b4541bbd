#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

namespace instrsim::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias correction.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, T(0)), v_(n, T(0)) {}

  void step(std::vector<T>& params, const std::vector<T>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step = static_cast<T>(cfg_.lr * std::sqrt(c2) / c1);
    const T eps = static_cast<T>(cfg_.eps * std::sqrt(c2));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (T(1) - b1) * grad[i];
      v_[i] = b2 * v_[i] + (T(1) - b2) * grad[i] * grad[i];
      params[i] -= step * m_[i] / (std::sqrt(v_[i]) + eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<T> m_, v_;
  long t_ = 0;
};

}  // namespace instrsim::nn
