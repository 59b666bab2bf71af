#include <excb/balancer.hpp>

#include <cmath>

namespace excb {

RelativeSizeVector init_sizes(int64_t clusters, double momentum) {
  BalancerConfig cfg{BalancerVariant::linear_under, momentum, clusters};
  cfg.validate();
  RelativeSizeVector state;
  state.momentum = momentum;
  state.s.assign(static_cast<size_t>(clusters), 1.0 / static_cast<double>(clusters));
  return state;
}

std::vector<double> shares_from_assignments(std::span<const int32_t> assignments, int64_t clusters) {
  if (assignments.empty()) throw std::invalid_argument("batch_shares: empty batch");
  std::vector<double> share(static_cast<size_t>(clusters), 0.0);
  const double w = 1.0 / static_cast<double>(assignments.size());
  for (int32_t a : assignments) {
    if (a < 0 || a >= clusters) throw std::invalid_argument("batch_shares: assignment out of range");
    share[static_cast<size_t>(a)] += w;
  }
  return share;
}

namespace {

void require_simplex(std::span<const double> v, const char* what) {
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(what) + ": entries sum to " + std::to_string(sum));
}

}  // namespace

void update_sizes(RelativeSizeVector& state, std::span<const double> batch_share) {
  if (static_cast<int64_t>(batch_share.size()) != state.clusters())
    throw std::invalid_argument("update_sizes: dimension mismatch");
  require_simplex(state.s, "update_sizes: state");
  require_simplex(batch_share, "update_sizes: batch share");
  const double m = state.momentum;
  if (m == 1.0) return;
  if (m == 0.0) {
    state.s.assign(batch_share.begin(), batch_share.end());
    return;
  }
  for (size_t k = 0; k < state.s.size(); ++k)
    state.s[k] = state.s[k] * m + batch_share[k] * (1.0 - m);
}

namespace detail {

void check_balance_inputs(std::span<const double> s, int64_t clusters) {
  (void)clusters;
  for (double v : s)
    if (!(v >= 0.0)) throw std::logic_error("balance: corrupted size state");
}

}  // namespace detail

double balance_value(double z, double s_times_k, BalancerVariant variant) {
  const double u = s_times_k;
  if (!(u >= 0.0)) throw std::logic_error("balance: corrupted size state");
  if (u < 1.0) {
    const double f = variant == BalancerVariant::exponential_under ? u * u : u;
    return 1.0 - (1.0 - z) * f;
  }
  if (u > 1.0) return (1.0 + z) / u - 1.0;
  return z;
}

// Same map written as two relu clamps, the vector-friendly form. The
// complements relu(1-u) and relu(1-1/u) are used directly so the u = 1
// fixed point stays bitwise exact:
//   zb = z + (1-z) * relu(1 - u)         (undersized leg)
//   zb = zb - (1+zb) * relu(1 - 1/u)     (oversized leg)
double balance_branchfree_value(double z, double s_times_k) {
  const double u = s_times_k;
  if (!(u >= 0.0)) throw std::logic_error("balance: corrupted size state");
  const double under = std::max(0.0, 1.0 - u);
  double zb = z + (1.0 - z) * under;
  const double over = std::max(0.0, 1.0 - 1.0 / u);  // u = 0 gives -inf, clamps to 0
  zb = zb - (1.0 + zb) * over;
  return zb;
}

}  // namespace excb
