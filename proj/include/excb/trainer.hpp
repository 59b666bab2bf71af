#pragma once

// The training loop: one step wires views -> teacher similarities ->
// size tracking and balancing -> targets -> student similarities with
// the detach rules -> multi-view loss -> backward -> SGD -> EMA.
//
// Size tracking uses the teacher's raw-similarity hard assignments over
// both global views concatenated; by default the EMA update lands before
// the batch is balanced (the in-step ordering), with the alternative
// order behind a config flag. Per-epoch statistics count the balanced
// assignments, i.e. the actual training targets.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <excb/balancer.hpp>
#include <excb/config.hpp>
#include <excb/metrics.hpp>
#include <excb/model.hpp>
#include <excb/objective.hpp>
#include <excb/schedule.hpp>
#include <excb/synthdata.hpp>
#include <excb/tensor.hpp>

namespace excb {

// Sufficient statistics for one epoch's telemetry row.
class EpochAccumulator {
 public:
  void reset(int64_t clusters, int64_t classes) {
    loss_sum_ = conf_sum_ = 0.0;
    steps_ = conf_rows_ = agree_matches_ = agree_pairs_ = 0;
    counts_.assign(static_cast<size_t>(clusters), 0);
    contingency_.assign(static_cast<size_t>(clusters * classes), 0);
    classes_ = classes;
  }

  void add_loss(double loss) {
    loss_sum_ += loss;
    ++steps_;
  }

  template <typename T>
  void add_targets(const std::vector<Tensor<T>>& p_t_views, const std::vector<int32_t>& labels) {
    std::vector<std::vector<int32_t>> assigns;
    assigns.reserve(p_t_views.size());
    for (const auto& p : p_t_views) {
      for (int64_t i = 0; i < p.rows(); ++i) {
        T mx = p.at(i, 0);
        for (int64_t j = 1; j < p.cols(); ++j) mx = std::max(mx, p.at(i, j));
        conf_sum_ += static_cast<double>(mx);
      }
      conf_rows_ += p.rows();
      assigns.push_back(hard_assignments(p));
      for (size_t i = 0; i < assigns.back().size(); ++i) {
        const int32_t a = assigns.back()[i];
        ++counts_[static_cast<size_t>(a)];
        ++contingency_[static_cast<size_t>(a) * static_cast<size_t>(classes_) +
                       static_cast<size_t>(labels[i])];
      }
    }
    const auto ac = agreement_counts(assigns);
    agree_matches_ += ac.matches;
    agree_pairs_ += ac.pairs;
  }

  EpochStats finalize(int64_t epoch) const {
    EpochStats row;
    row.epoch = epoch;
    row.loss = loss_sum_ / static_cast<double>(steps_);
    row.confidence = conf_sum_ / static_cast<double>(conf_rows_);
    row.agreement = static_cast<double>(agree_matches_) / static_cast<double>(agree_pairs_);
    int64_t total = 0, majority = 0;
    for (int64_t c = 0; c < static_cast<int64_t>(counts_.size()); ++c) {
      total += counts_[static_cast<size_t>(c)];
      int64_t best = 0;
      for (int64_t l = 0; l < classes_; ++l)
        best = std::max(best, contingency_[static_cast<size_t>(c * classes_ + l)]);
      majority += best;
    }
    row.purity = static_cast<double>(majority) / static_cast<double>(total);
    const SizeStats ss = size_stats_from_counts(counts_, total);
    row.min_rel_size = ss.min_rel;
    row.max_rel_size = ss.max_rel;
    row.empty_frac = ss.empty_frac;
    return row;
  }

 private:
  double loss_sum_ = 0.0, conf_sum_ = 0.0;
  int64_t steps_ = 0, conf_rows_ = 0, agree_matches_ = 0, agree_pairs_ = 0;
  int64_t classes_ = 0;
  std::vector<int64_t> counts_;
  std::vector<int64_t> contingency_;
};

template <typename T>
class Trainer {
 public:
  explicit Trainer(const ExperimentConfig& cfg)
      : cfg_(cfg),
        model_(cfg.model_config()),
        sizes_(init_sizes(cfg.clusters, cfg.size_momentum)) {
    cfg.validate();
    sched_.total_steps = cfg.total_steps();
    sched_.warmup_steps = cfg.warmup_epochs * cfg.steps_per_epoch();
    sched_.base_lr = cfg.base_lr;
    sched_.final_lr = cfg.final_lr;
    sched_.ema_base = cfg.teacher_momentum;
    sched_.centroid_wd_start = cfg.centroid_wd_start;
    sched_.centroid_wd_end = cfg.centroid_wd_end;
    acc_.reset(cfg.clusters, cfg.classes);
    if (cfg.centroid_init_from_data) seed_centroids_from_data();
  }

  // Forgy-style seeding: centroid rows become the projected embeddings of
  // K base points drawn from a reserved stream index, so every cluster
  // starts inside the data's embedding cloud. Uniform random directions
  // leave most clusters unclaimed at this scale.
  void seed_centroids_from_data() {
    constexpr int64_t kSeedStep = int64_t(1) << 40;  // outside any training range
    auto [points, labels] = sample_points<T>(cfg_.mixture_spec(), cfg_.clusters, kSeedStep);
    Tensor<T> emb = model_.teacher_embeddings(points);
    std::vector<T> rows(static_cast<size_t>(cfg_.clusters * cfg_.projector_out));
    for (int64_t k = 0; k < cfg_.clusters; ++k) {
      double sq = 0.0;
      for (int64_t j = 0; j < cfg_.projector_out; ++j) {
        const double v = static_cast<double>(emb.at(k, j));
        sq += v * v;
      }
      const double inv = 1.0 / std::sqrt(sq);
      for (int64_t j = 0; j < cfg_.projector_out; ++j)
        rows[static_cast<size_t>(k * cfg_.projector_out + j)] =
            static_cast<T>(static_cast<double>(emb.at(k, j)) * inv);
    }
    for (auto* p : model_.student_parameters())
      if (p->name == "centroids") p->value = rows;
    for (auto* p : model_.teacher_parameters())
      if (p->name == "t.centroids") p->value = rows;
  }

  struct StepResult {
    double loss = 0.0;
    ScheduleValues schedule;
  };

  StepResult step() {
    const auto spec = cfg_.mixture_spec();
    auto batch = sample_batch<T>(spec, cfg_.views, cfg_.batch_size, step_);

    // teacher forward on global views only
    const auto z_t = model_.teacher_similarities(batch.globals);

    // in-batch shares from the raw-similarity hard assignments
    std::vector<int32_t> assigned;
    assigned.reserve(static_cast<size_t>(cfg_.batch_size) * z_t.size());
    for (const auto& z : z_t) {
      const auto a = hard_assignments(z);
      assigned.insert(assigned.end(), a.begin(), a.end());
    }
    const auto s_batch = shares_from_assignments(assigned, cfg_.clusters);

    std::vector<AssignmentProbabilities<T>> p_t;
    auto make_targets = [&]() {
      for (const auto& z : z_t)
        p_t.push_back(teacher_targets(z, sizes_, cfg_.balancer_variant, cfg_.teacher_temperature,
                                      cfg_.balancing_enabled));
    };
    if (cfg_.update_before_balance) {
      update_sizes(sizes_, s_batch);
      make_targets();
    } else {
      make_targets();
      update_sizes(sizes_, s_batch);
    }
    check_simplex();

    // student forward with detach rules, then the multi-view loss
    Tape<T> tape;
    auto out = model_.student_similarities(tape, batch.globals, batch.locals);
    std::vector<AssignmentProbabilities<T>> p_h, p_g;
    for (const auto& z : out.z_h_global)
      p_h.push_back(student_probabilities(z, cfg_.student_temperature,
                                          AssignmentSource::student_projector));
    for (const auto& z : out.z_h_local)
      p_h.push_back(student_probabilities(z, cfg_.student_temperature,
                                          AssignmentSource::student_projector));
    for (const auto& z : out.z_g)
      p_g.push_back(student_probabilities(z, cfg_.student_temperature,
                                          AssignmentSource::student_predictor));
    Tensor<T> loss = multiview_loss(p_t, p_h, p_g);

    const auto sched = schedules(sched_, step_);
    const double loss_value = static_cast<double>(loss.value());
    model_.zero_grad();
    backward(loss);
    if (!std::isfinite(loss_value)) abort_non_finite(loss_value, sched);

    model_.sgd_step(sched.lr, cfg_.sgd_momentum, sched.centroid_wd, cfg_.weight_decay);
    model_.ema_update(sched.ema_momentum);

    std::vector<Tensor<T>> target_views;
    for (const auto& p : p_t) target_views.push_back(p.p);
    acc_.add_targets(target_views, batch.labels);
    acc_.add_loss(loss_value);

    ++step_;
    return {loss_value, sched};
  }

  EpochStats run_epoch() {
    if (step_ % cfg_.steps_per_epoch() != 0)
      throw std::logic_error("trainer: run_epoch called off an epoch boundary");
    const int64_t epoch = step_ / cfg_.steps_per_epoch();
    acc_.reset(cfg_.clusters, cfg_.classes);
    for (int64_t i = 0; i < cfg_.steps_per_epoch(); ++i) step();
    return acc_.finalize(epoch);
  }

  int64_t current_step() const { return step_; }
  void set_step(int64_t step) { step_ = step; }
  const ExperimentConfig& config() const { return cfg_; }
  ModelPair<T>& model() { return model_; }
  const ModelPair<T>& model() const { return model_; }
  RelativeSizeVector& sizes() { return sizes_; }
  const RelativeSizeVector& sizes() const { return sizes_; }

 private:
  void check_simplex() const {
    const double sum = sizes_.sum();
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::runtime_error("trainer: relative sizes left the simplex at step " +
                               std::to_string(step_) + " (sum " + std::to_string(sum) + ")");
  }

  [[noreturn]] void abort_non_finite(double loss_value, const ScheduleValues& sched) {
    std::ostringstream os;
    os << "trainer: non-finite loss " << loss_value << " at step " << step_;
    os << "; lr=" << sched.lr << " ema=" << sched.ema_momentum << " wd=" << sched.centroid_wd;
    double smin = 1e300, smax = -1e300;
    for (double v : sizes_.s) {
      smin = std::min(smin, v);
      smax = std::max(smax, v);
    }
    os << "; s[min=" << smin << " max=" << smax << " sum=" << sizes_.sum() << "]";
    os << "; grad_norms:";
    for (auto* p : model_.student_parameters()) {
      double sq = 0.0;
      for (T g : *p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
      os << " " << p->name << "=" << std::sqrt(sq);
    }
    throw std::runtime_error(os.str());
  }

  ExperimentConfig cfg_;
  ModelPair<T> model_;
  RelativeSizeVector sizes_;
  ScheduleConfig sched_;
  EpochAccumulator acc_;
  int64_t step_ = 0;
};

}  // namespace excb
