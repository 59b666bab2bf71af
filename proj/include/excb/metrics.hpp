#pragma once

// Training statistics and the post-training cluster audit. All counting
// uses the balancer's hard-assignment rule (argmax, ties to the lowest
// index) so per-epoch statistics and audits agree exactly.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <excb/balancer.hpp>
#include <excb/model.hpp>
#include <excb/synthdata.hpp>
#include <excb/tensor.hpp>

namespace excb {

// Mean of per-row maxima over all rows of all views.
template <typename T>
double confidence(const std::vector<Tensor<T>>& probs_per_view) {
  int64_t rows = 0;
  double sum = 0.0;
  for (const auto& p : probs_per_view) {
    detail::require_rank2(p, "confidence");
    for (int64_t i = 0; i < p.rows(); ++i) {
      T mx = p.at(i, 0);
      for (int64_t j = 1; j < p.cols(); ++j) mx = std::max(mx, p.at(i, j));
      sum += static_cast<double>(mx);
    }
    rows += p.rows();
  }
  if (rows == 0) throw std::invalid_argument("confidence: no rows");
  return sum / static_cast<double>(rows);
}

struct AgreementCounts {
  int64_t matches = 0;
  int64_t pairs = 0;

  double value() const {
    if (pairs == 0) throw std::invalid_argument("agreement: no view pairs");
    return static_cast<double>(matches) / static_cast<double>(pairs);
  }
};

// Ordered view pairs (v, w), v != w, whose hard assignments coincide.
AgreementCounts agreement_counts(const std::vector<std::vector<int32_t>>& assignments_per_view);

// Fraction of agreeing ordered pairs over samples; 1 for a perfectly
// view-consistent teacher.
template <typename T>
double agreement(const std::vector<Tensor<T>>& probs_per_view) {
  if (probs_per_view.size() < 2)
    throw std::invalid_argument("agreement: needs at least two views");
  std::vector<std::vector<int32_t>> assign;
  assign.reserve(probs_per_view.size());
  for (const auto& p : probs_per_view) assign.push_back(hard_assignments(p));
  return agreement_counts(assign).value();
}

// Sum over clusters of the majority class count, divided by N.
double purity(std::span<const int32_t> assignments, std::span<const int32_t> labels);

struct SizeStats {
  double min_rel = 0.0;    // over all clusters, empty ones score 0
  double max_rel = 0.0;
  double empty_frac = 0.0;
};

std::vector<int64_t> cluster_counts(std::span<const int32_t> assignments, int64_t clusters);
SizeStats size_stats_from_counts(std::span<const int64_t> counts, int64_t total);
SizeStats size_stats(std::span<const int32_t> assignments, int64_t clusters);

// One telemetry row.
struct EpochStats {
  int64_t epoch = 0;
  double loss = 0.0;
  double confidence = 0.0;
  double agreement = 0.0;
  double purity = 0.0;
  double min_rel_size = 0.0;
  double max_rel_size = 0.0;
  double empty_frac = 0.0;
};

struct AuditResult {
  int64_t clusters = 0;
  int64_t points = 0;
  std::vector<int64_t> counts;                 // per cluster, unsorted
  std::vector<double> sorted_relative_sizes;   // descending
  SizeStats stats;
};

// Plain-inference audit: hard-assign every base point of the given step
// range with the frozen teacher, raw argmax of the similarities, no
// balancing.
template <typename T>
AuditResult posttrain_audit(const ModelPair<T>& model, const MixtureSpec& spec,
                            int64_t batch_size, int64_t first_step, int64_t step_count) {
  if (batch_size < 1 || step_count < 1) throw std::invalid_argument("audit: empty dataset");
  const int64_t k = model.config().clusters;
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);
  int64_t total = 0;
  for (int64_t s = 0; s < step_count; ++s) {
    auto [points, labels] = sample_points<T>(spec, batch_size, first_step + s);
    auto z = model.teacher_similarities({points});
    for (int32_t a : hard_assignments(z[0])) ++counts[static_cast<size_t>(a)];
    total += batch_size;
  }
  AuditResult out;
  out.clusters = k;
  out.points = total;
  out.counts = counts;
  out.stats = size_stats_from_counts(counts, total);
  out.sorted_relative_sizes.reserve(static_cast<size_t>(k));
  for (int64_t c = 0; c < k; ++c)
    out.sorted_relative_sizes.push_back(static_cast<double>(counts[static_cast<size_t>(c)]) *
                                        static_cast<double>(k) / static_cast<double>(total));
  std::sort(out.sorted_relative_sizes.begin(), out.sorted_relative_sizes.end(),
            std::greater<double>());
  return out;
}

}  // namespace excb
