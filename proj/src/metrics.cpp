#include <excb/metrics.hpp>

#include <algorithm>

namespace excb {

AgreementCounts agreement_counts(const std::vector<std::vector<int32_t>>& assignments_per_view) {
  const size_t views = assignments_per_view.size();
  if (views < 2) throw std::invalid_argument("agreement: needs at least two views");
  const size_t n = assignments_per_view[0].size();
  for (const auto& a : assignments_per_view)
    if (a.size() != n) throw std::invalid_argument("agreement: ragged view assignments");
  AgreementCounts out;
  for (size_t i = 0; i < n; ++i)
    for (size_t v = 0; v < views; ++v)
      for (size_t w = 0; w < views; ++w) {
        if (v == w) continue;
        out.matches += assignments_per_view[v][i] == assignments_per_view[w][i];
        ++out.pairs;
      }
  return out;
}

double purity(std::span<const int32_t> assignments, std::span<const int32_t> labels) {
  if (assignments.empty() || assignments.size() != labels.size())
    throw std::invalid_argument("purity: mismatched assignment/label sizes");
  int32_t max_cluster = 0, max_label = 0;
  for (size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] < 0 || labels[i] < 0) throw std::invalid_argument("purity: negative id");
    max_cluster = std::max(max_cluster, assignments[i]);
    max_label = std::max(max_label, labels[i]);
  }
  const size_t k = static_cast<size_t>(max_cluster) + 1;
  const size_t c = static_cast<size_t>(max_label) + 1;
  std::vector<int64_t> table(k * c, 0);
  for (size_t i = 0; i < assignments.size(); ++i)
    ++table[static_cast<size_t>(assignments[i]) * c + static_cast<size_t>(labels[i])];
  int64_t majority_sum = 0;
  for (size_t cl = 0; cl < k; ++cl) {
    int64_t best = 0;
    for (size_t lb = 0; lb < c; ++lb) best = std::max(best, table[cl * c + lb]);
    majority_sum += best;
  }
  return static_cast<double>(majority_sum) / static_cast<double>(assignments.size());
}

std::vector<int64_t> cluster_counts(std::span<const int32_t> assignments, int64_t clusters) {
  std::vector<int64_t> counts(static_cast<size_t>(clusters), 0);
  for (int32_t a : assignments) {
    if (a < 0 || a >= clusters) throw std::invalid_argument("size_stats: assignment out of range");
    ++counts[static_cast<size_t>(a)];
  }
  return counts;
}

SizeStats size_stats_from_counts(std::span<const int64_t> counts, int64_t total) {
  if (total < 1) throw std::invalid_argument("size_stats: empty sample set");
  const int64_t k = static_cast<int64_t>(counts.size());
  SizeStats out;
  out.min_rel = 1e300;
  int64_t empty = 0;
  for (int64_t c = 0; c < k; ++c) {
    const double rel = static_cast<double>(counts[static_cast<size_t>(c)]) *
                       static_cast<double>(k) / static_cast<double>(total);
    out.min_rel = std::min(out.min_rel, rel);
    out.max_rel = std::max(out.max_rel, rel);
    empty += counts[static_cast<size_t>(c)] == 0;
  }
  out.empty_frac = static_cast<double>(empty) / static_cast<double>(k);
  return out;
}

SizeStats size_stats(std::span<const int32_t> assignments, int64_t clusters) {
  if (assignments.empty()) throw std::invalid_argument("size_stats: empty sample set");
  const auto counts = cluster_counts(assignments, clusters);
  return size_stats_from_counts(counts, static_cast<int64_t>(assignments.size()));
}

}  // namespace excb
