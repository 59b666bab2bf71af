#pragma once

// Online cluster-size tracking and the similarity-rebalancing operator.
//
// The training loop counts the teacher's hard assignments per batch,
// folds them into an exponential moving average of relative cluster
// sizes, and rescales teacher similarities so undersized clusters gain
// samples and oversized ones lose them. State lives in double regardless
// of model precision; the per-entry operator math runs in double and is
// cast at the tensor boundary.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <excb/tensor.hpp>

namespace excb {

enum class BalancerVariant {
  linear_under,       // undersized branch shrinks linearly in s*K
  exponential_under,  // undersized branch shrinks quadratically in s*K
};

inline const char* to_string(BalancerVariant v) {
  return v == BalancerVariant::linear_under ? "linear" : "exponential";
}

// EMA estimate of per-cluster sample share. Stays on the simplex: it is
// initialized there and convex combinations of simplex vectors remain on
// it up to rounding.
struct RelativeSizeVector {
  std::vector<double> s;
  double momentum = 0.999;

  int64_t clusters() const { return static_cast<int64_t>(s.size()); }
  double sum() const {
    double t = 0.0;
    for (double v : s) t += v;
    return t;
  }
};

struct BalancerConfig {
  BalancerVariant variant = BalancerVariant::linear_under;
  double momentum = 0.999;
  int64_t clusters = 0;

  void validate() const {
    if (clusters < 2) throw std::invalid_argument("balancer: needs at least 2 clusters");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("balancer: momentum must lie in [0, 1)");
  }
};

RelativeSizeVector init_sizes(int64_t clusters, double momentum = 0.999);

// Row argmax with ties broken to the lowest index. This is the single
// hard-assignment rule; metrics reuse it so counts always agree.
template <typename T>
std::vector<int32_t> hard_assignments(const Tensor<T>& rows) {
  detail::require_rank2(rows, "hard_assignments");
  const int64_t n = rows.rows(), k = rows.cols();
  std::vector<int32_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int32_t best = 0;
    T bv = rows.at(i, 0);
    for (int64_t j = 1; j < k; ++j) {
      const T v = rows.at(i, j);
      if (v > bv) {
        bv = v;
        best = static_cast<int32_t>(j);
      }
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

std::vector<double> shares_from_assignments(std::span<const int32_t> assignments, int64_t clusters);

// In-batch share of samples hard-assigned to each cluster.
template <typename T>
std::vector<double> batch_shares(const Tensor<T>& probabilities) {
  detail::require_rank2(probabilities, "batch_shares");
  if (probabilities.rows() < 1) throw std::invalid_argument("batch_shares: empty batch");
  for (int64_t i = 0; i < probabilities.rows(); ++i) {
    double row = 0.0;
    for (int64_t j = 0; j < probabilities.cols(); ++j) row += static_cast<double>(probabilities.at(i, j));
    if (std::abs(row - 1.0) > 1e-6)
      throw std::invalid_argument("batch_shares: row " + std::to_string(i) + " is not on the simplex");
  }
  return shares_from_assignments(hard_assignments(probabilities), probabilities.cols());
}

void update_sizes(RelativeSizeVector& state, std::span<const double> batch_share);

// Scalar operator on one similarity given u = s*K: identity at u = 1,
// boosts toward +1 as u -> 0, deflates toward -1 as u grows.
double balance_value(double z, double s_times_k, BalancerVariant variant);
double balance_branchfree_value(double z, double s_times_k);

namespace detail {
void check_balance_inputs(std::span<const double> s, int64_t clusters);

template <typename T>
Tensor<T> apply_columnwise(const Tensor<T>& z, const RelativeSizeVector& state,
                           double (*fn)(double, double, BalancerVariant), BalancerVariant variant) {
  require_rank2(z, "balance");
  if (z.cols() != state.clusters())
    throw std::invalid_argument("balance: similarity columns " + std::to_string(z.cols()) +
                                " vs " + std::to_string(state.clusters()) + " clusters");
  check_balance_inputs(state.s, state.clusters());
  const int64_t n = z.rows(), k = z.cols();
  const double kd = static_cast<double>(k);
  std::vector<T> out(static_cast<size_t>(n * k));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) {
      double v = static_cast<double>(z.at(i, j));
      if (v < -1.0 - 1e-6 || v > 1.0 + 1e-6)
        throw std::domain_error("balance: similarity outside [-1, 1]");
      v = std::min(1.0, std::max(-1.0, v));
      out[static_cast<size_t>(i * k + j)] =
          static_cast<T>(fn(v, state.s[static_cast<size_t>(j)] * kd, variant));
    }
  // teacher-side only: result is a constant, no gradient path
  return Tensor<T>::constant({n, k}, std::move(out));
}
}  // namespace detail

template <typename T>
Tensor<T> balance(const Tensor<T>& z, const RelativeSizeVector& state,
                  BalancerVariant variant = BalancerVariant::linear_under) {
  return detail::apply_columnwise(
      z, state, [](double v, double u, BalancerVariant var) { return balance_value(v, u, var); },
      variant);
}

template <typename T>
Tensor<T> balance_branchfree(const Tensor<T>& z, const RelativeSizeVector& state) {
  return detail::apply_columnwise(
      z, state,
      [](double v, double u, BalancerVariant) { return balance_branchfree_value(v, u); },
      BalancerVariant::linear_under);
}

}  // namespace excb
