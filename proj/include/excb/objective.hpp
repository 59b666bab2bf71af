#pragma once

// Assignment probabilities and the multi-view clustering objective.
//
// Teacher targets are the tempered softmax of rebalanced similarities and
// never carry gradients. The loss averages per-pair batch cross-entropies
// in two halves: projector probabilities are matched against every
// teacher view except their own, predictor probabilities against every
// teacher view including their own. Each half is normalized by its
// ordered-pair count and the halves get equal weight, so the uniform
// fixed point scores exactly log K.

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include <excb/balancer.hpp>
#include <excb/tensor.hpp>

namespace excb {

enum class AssignmentSource { teacher, student_projector, student_predictor };

template <typename T>
struct AssignmentProbabilities {
  Tensor<T> p;  // N x K, rows on the simplex
  AssignmentSource source = AssignmentSource::teacher;
  double temperature = 0.0;
};

namespace detail {

template <typename T>
void require_simplex_rows(const Tensor<T>& p, const char* what) {
  require_rank2(p, what);
  // 1e-9 at 64-bit; wider at 32-bit where row sums only reach ~K*eps
  const double tol = std::max(1e-9, 100.0 * static_cast<double>(std::numeric_limits<T>::epsilon()));
  for (int64_t i = 0; i < p.rows(); ++i) {
    double sum = 0.0;
    for (int64_t j = 0; j < p.cols(); ++j) sum += static_cast<double>(p.at(i, j));
    if (std::abs(sum - 1.0) > tol)
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) +
                                  " is off the simplex");
  }
}

}  // namespace detail

// Tempered softmax of the student's similarities; stays on the tape.
template <typename T>
AssignmentProbabilities<T> student_probabilities(const Tensor<T>& z, double temperature,
                                                 AssignmentSource source) {
  return {softmax_rows(z, static_cast<T>(temperature)), source, temperature};
}

// Balance, then tempered softmax. Teacher-side: the result is constant.
// With balancing disabled the operator is skipped outright (exact
// identity, not a numerical one).
template <typename T>
AssignmentProbabilities<T> teacher_targets(const Tensor<T>& z_t, const RelativeSizeVector& sizes,
                                           BalancerVariant variant, double temperature,
                                           bool balancing_enabled = true) {
  Tensor<T> z = balancing_enabled ? balance(z_t, sizes, variant)
                                  : (z_t.on_tape() ? z_t.detach() : z_t);
  return {softmax_rows(z, static_cast<T>(temperature)), AssignmentSource::teacher, temperature};
}

struct LossPair {
  int teacher_view = 0;  // global view index in [0, G)
  int student_view = 0;  // view index in [0, G + L); globals first
  bool predictor_path = false;
};

// The ordered (teacher, student) pairs the loss sums over: the projector
// half skips the diagonal, the predictor half keeps it.
inline std::vector<LossPair> loss_pairs(int global_views, int local_views) {
  if (global_views < 1 || local_views < 0 || global_views + local_views < 2)
    throw std::invalid_argument("loss_pairs: need at least two views with one global");
  std::vector<LossPair> out;
  for (int v = 0; v < global_views; ++v) {
    for (int w = 0; w < global_views + local_views; ++w) {
      if (w != v) out.push_back({v, w, false});
      out.push_back({v, w, true});
    }
  }
  return out;
}

template <typename T>
Tensor<T> multiview_loss(const std::vector<AssignmentProbabilities<T>>& teacher,
                         const std::vector<AssignmentProbabilities<T>>& projector,
                         const std::vector<AssignmentProbabilities<T>>& predictor) {
  const int g = static_cast<int>(teacher.size());
  const int total = static_cast<int>(projector.size());
  if (predictor.size() != projector.size())
    throw std::invalid_argument("multiview_loss: projector/predictor view counts differ");
  const auto pairs = loss_pairs(g, total - g);

  for (const auto& t : teacher) detail::require_simplex_rows(t.p, "multiview_loss: teacher");

  Tensor<T> sum_h, sum_g;
  bool have_h = false, have_g = false;
  for (const auto& pr : pairs) {
    const auto& target = teacher[static_cast<size_t>(pr.teacher_view)].p;
    const auto& student =
        (pr.predictor_path ? predictor : projector)[static_cast<size_t>(pr.student_view)].p;
    Tensor<T> term = cross_entropy_rows(target, student);
    if (pr.predictor_path) {
      sum_g = have_g ? add(sum_g, term) : term;
      have_g = true;
    } else {
      sum_h = have_h ? add(sum_h, term) : term;
      have_h = true;
    }
  }
  const double pairs_h = static_cast<double>(g) * static_cast<double>(total - 1);
  const double pairs_g = static_cast<double>(g) * static_cast<double>(total);
  return add(scale(sum_h, static_cast<T>(0.5 / pairs_h)),
             scale(sum_g, static_cast<T>(0.5 / pairs_g)));
}

}  // namespace excb
