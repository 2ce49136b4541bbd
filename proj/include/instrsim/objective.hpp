#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "instrsim/common.hpp"

namespace instrsim {

/// 0/1 mask keeping subspace c of a C*D embedding.
struct ConditionMask {
  int condition = 0;
  int D = 0;
  int C = 0;
  std::vector<double> m;

  std::size_t size() const { return m.size(); }
  int begin() const { return condition * D; }
  int end() const { return (condition + 1) * D; }
};

inline ConditionMask condition_mask(int c, int D, int C) {
  if (C < 1 || D < 1) throw ParameterError("C and D must be positive");
  if (c < 0 || c >= C) throw ParameterError("condition " + std::to_string(c) + " out of range");
  ConditionMask mask{c, D, C, std::vector<double>(static_cast<std::size_t>(C * D), 0.0)};
  for (int d = c * D; d < (c + 1) * D; ++d) mask.m[static_cast<std::size_t>(d)] = 1.0;
  return mask;
}

inline ConditionMask full_mask(int E) {
  return ConditionMask{-1, E, 1, std::vector<double>(static_cast<std::size_t>(E), 1.0)};
}

template <typename T>
double masked_distance(std::span<const T> a, std::span<const T> b, std::span<const double> m) {
  if (a.size() != b.size() || a.size() != m.size()) throw ShapeError("masked_distance length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = m[i] * static_cast<double>(a[i]) - m[i] * static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

template <typename T>
double masked_distance(const std::vector<T>& a, const std::vector<T>& b, const ConditionMask& m) {
  return masked_distance<T>(std::span<const T>(a), std::span<const T>(b), std::span<const double>(m.m));
}

template <typename T>
double masked_triplet_loss(const std::vector<T>& a, const std::vector<T>& p, const std::vector<T>& n,
                           const ConditionMask& m, double delta) {
  if (delta < 0) throw ParameterError("margin must be >= 0");
  return std::max(0.0, masked_distance(a, p, m) - masked_distance(a, n, m) + delta);
}

template <typename T>
double plain_triplet_loss(const std::vector<T>& a, const std::vector<T>& p, const std::vector<T>& n,
                          double margin) {
  return masked_triplet_loss(a, p, n, full_mask(static_cast<int>(a.size())), margin);
}

template <typename T>
double auxiliary_loss(const std::vector<T>& f, const std::vector<T>& target) {
  if (f.size() != target.size()) throw ShapeError("auxiliary_loss length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double d = static_cast<double>(f[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

struct LossBreakdown {
  double l_triplet = 0.0;
  double l_aux = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

inline LossBreakdown combined_loss(double l_t, double l_m, double lambda = 0.1) {
  if (lambda < 0) throw ParameterError("lambda must be >= 0");
  return {l_t, l_m, lambda, l_t + lambda * l_m};
}

/// Normalized concatenation of per-condition blocks; absent blocks are zero.
/// A zero-norm result is returned as zeros with `flagged` set.
struct TargetEmbedding {
  std::vector<double> values;
  bool flagged = false;
};

inline TargetEmbedding normalize_target(const std::vector<std::vector<double>>& blocks, int D) {
  TargetEmbedding t;
  for (const auto& b : blocks) {
    if (b.empty()) {
      t.values.insert(t.values.end(), static_cast<std::size_t>(D), 0.0);
    } else {
      if (static_cast<int>(b.size()) != D) throw ShapeError("target block width differs from D");
      t.values.insert(t.values.end(), b.begin(), b.end());
    }
  }
  double norm = 0.0;
  for (double v : t.values) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    t.flagged = true;
    return t;
  }
  for (double& v : t.values) v /= norm;
  return t;
}

// ---------------------------------------------------------------------------
// Gradients with respect to embeddings. The hinge uses the inactive side at
// the kink; a zero distance contributes a zero gradient.

template <typename T>
void masked_distance_grad(std::span<const T> a, std::span<const T> b, std::span<const double> m,
                          double dist, double scale, std::span<T> ga, std::span<T> gb) {
  if (dist <= 0.0) return;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double g = scale * m[i] * m[i] * (static_cast<double>(a[i]) - static_cast<double>(b[i])) / dist;
    ga[i] += static_cast<T>(g);
    gb[i] -= static_cast<T>(g);
  }
}

/// Adds scale * dL/d{a,p,n} of the masked triplet loss; returns the loss.
template <typename T>
double masked_triplet_loss_grad(std::span<const T> a, std::span<const T> p, std::span<const T> n,
                                std::span<const double> m, double delta, double scale, std::span<T> ga,
                                std::span<T> gp, std::span<T> gn) {
  const double dap = masked_distance(a, p, m), dan = masked_distance(a, n, m);
  const double loss = dap - dan + delta;
  if (loss <= 0.0) return 0.0;
  masked_distance_grad(a, p, m, dap, scale, ga, gp);
  masked_distance_grad(a, n, m, dan, -scale, ga, gn);
  return loss;
}

/// Adds scale * dL_M/df; returns L_M.
template <typename T>
double auxiliary_loss_grad(std::span<const T> f, std::span<const double> target, double scale,
                           std::span<T> gf) {
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double d = static_cast<double>(f[i]) - target[i];
    acc += d * d;
  }
  const double l = std::sqrt(acc);
  if (l > 0.0)
    for (std::size_t i = 0; i < f.size(); ++i)
      gf[i] += static_cast<T>(scale * (static_cast<double>(f[i]) - target[i]) / l);
  return l;
}

}  // namespace instrsim
