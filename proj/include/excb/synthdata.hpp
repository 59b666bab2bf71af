#pragma once

// Deterministic synthetic sample streams. Base points come from an
// isotropic Gaussian mixture whose class centers sit pairwise at a fixed
// distance (in units of the within-class standard deviation, which is 1).
// Each base point yields G "global" views (small additive noise) and L
// "local" views (a contiguous block of coordinates zeroed, then noisier
// additive noise) standing in for full and partial image crops. Batches
// are a pure function of (seed, step).

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <excb/rng.hpp>
#include <excb/tensor.hpp>

namespace excb {

struct MixtureSpec {
  int64_t num_classes = 8;
  int64_t input_dim = 32;
  double separation = 10.0;  // inter-center distance / within-class std
  int64_t samples_per_epoch = 8192;
  uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("mixture: needs at least 2 classes");
    if (!(separation > 0.0)) throw std::invalid_argument("mixture: separation must be positive");
    if (input_dim < num_classes)
      throw std::invalid_argument("mixture: input_dim must be at least num_classes");
    if (samples_per_epoch < 1) throw std::invalid_argument("mixture: empty epoch");
  }
};

struct ViewPolicy {
  int64_t global_views = 2;
  int64_t local_views = 6;
  double global_noise = 0.1;   // sigma_g; local views use 2 * sigma_g
  double mask_fraction = 0.5;  // contiguous share of coordinates zeroed in local views

  void validate() const {
    if (global_views < 1) throw std::invalid_argument("views: needs at least one global view");
    if (local_views < 0) throw std::invalid_argument("views: negative local view count");
    if (!(global_noise >= 0.0)) throw std::invalid_argument("views: negative noise");
    if (!(mask_fraction >= 0.0 && mask_fraction <= 1.0))
      throw std::invalid_argument("views: mask fraction outside [0, 1]");
  }
};

template <typename T>
struct ViewBatch {
  std::vector<Tensor<T>> globals;  // G tensors, N x D
  std::vector<Tensor<T>> locals;   // L tensors, N x D
  std::vector<int32_t> labels;     // shared by every view of a sample
  uint64_t batch_seed = 0;
};

// Orthonormal random directions scaled so every pair of centers is
// exactly `separation` apart. Row-major num_classes x input_dim.
inline std::vector<double> class_centers(const MixtureSpec& spec) {
  spec.validate();
  const int64_t g = spec.num_classes, d = spec.input_dim;
  Rng rng(spec.seed, Stream::mixture_centers);
  std::vector<double> rows(static_cast<size_t>(g * d));
  for (auto& v : rows) v = rng.next_normal();
  // modified Gram-Schmidt
  for (int64_t i = 0; i < g; ++i) {
    double* ri = rows.data() + i * d;
    for (int64_t j = 0; j < i; ++j) {
      const double* rj = rows.data() + j * d;
      double dot = 0.0;
      for (int64_t t = 0; t < d; ++t) dot += ri[t] * rj[t];
      for (int64_t t = 0; t < d; ++t) ri[t] -= dot * rj[t];
    }
    double nrm = 0.0;
    for (int64_t t = 0; t < d; ++t) nrm += ri[t] * ri[t];
    nrm = std::sqrt(nrm);
    if (nrm < 1e-8) throw std::runtime_error("mixture: degenerate center draw");
    for (int64_t t = 0; t < d; ++t) ri[t] /= nrm;
  }
  const double radius = spec.separation / std::sqrt(2.0);
  for (auto& v : rows) v *= radius;
  return rows;
}

namespace detail {

struct BatchDraw {
  std::vector<int32_t> labels;
  std::vector<double> base;  // N x D
  Rng rng;                   // positioned after labels+base draws
};

inline BatchDraw draw_base(const MixtureSpec& spec, const std::vector<double>& centers,
                           int64_t batch_size, int64_t step) {
  if (batch_size < 1) throw std::invalid_argument("sample_batch: empty batch");
  const int64_t d = spec.input_dim;
  BatchDraw out{{}, {}, Rng(spec.seed, Stream::batch, static_cast<uint64_t>(step))};
  out.labels.resize(static_cast<size_t>(batch_size));
  for (auto& l : out.labels)
    l = static_cast<int32_t>(out.rng.next_below(static_cast<uint64_t>(spec.num_classes)));
  out.base.resize(static_cast<size_t>(batch_size * d));
  for (int64_t i = 0; i < batch_size; ++i) {
    const double* c = centers.data() + static_cast<int64_t>(out.labels[static_cast<size_t>(i)]) * d;
    double* row = out.base.data() + i * d;
    for (int64_t t = 0; t < d; ++t) row[t] = c[t] + out.rng.next_normal();
  }
  return out;
}

}  // namespace detail

template <typename T>
ViewBatch<T> sample_batch(const MixtureSpec& spec, const ViewPolicy& policy, int64_t batch_size,
                          int64_t step) {
  spec.validate();
  policy.validate();
  const auto centers = class_centers(spec);
  auto draw = detail::draw_base(spec, centers, batch_size, step);
  const int64_t n = batch_size, d = spec.input_dim;

  ViewBatch<T> out;
  out.labels = draw.labels;
  out.batch_seed = substream_seed(spec.seed, Stream::batch, static_cast<uint64_t>(step));

  const double sigma_g = policy.global_noise;
  for (int64_t v = 0; v < policy.global_views; ++v) {
    std::vector<T> view(static_cast<size_t>(n * d));
    for (int64_t i = 0; i < n * d; ++i)
      view[static_cast<size_t>(i)] =
          static_cast<T>(draw.base[static_cast<size_t>(i)] + sigma_g * draw.rng.next_normal());
    out.globals.push_back(Tensor<T>::constant({n, d}, std::move(view)));
  }

  const double sigma_l = 2.0 * sigma_g;
  const int64_t mask_len = static_cast<int64_t>(std::llround(policy.mask_fraction * double(d)));
  for (int64_t v = 0; v < policy.local_views; ++v) {
    std::vector<T> view(static_cast<size_t>(n * d));
    for (int64_t i = 0; i < n; ++i) {
      const int64_t start =
          static_cast<int64_t>(draw.rng.next_below(static_cast<uint64_t>(d - mask_len + 1)));
      const double* row = draw.base.data() + i * d;
      for (int64_t t = 0; t < d; ++t) {
        const bool masked = t >= start && t < start + mask_len;
        view[static_cast<size_t>(i * d + t)] =
            static_cast<T>((masked ? 0.0 : row[t]) + sigma_l * draw.rng.next_normal());
      }
    }
    out.locals.push_back(Tensor<T>::constant({n, d}, std::move(view)));
  }
  return out;
}

// The base points behind sample_batch(spec, ., batch_size, step), before
// any view augmentation. Used for plain-inference audits and export.
template <typename T>
std::pair<Tensor<T>, std::vector<int32_t>> sample_points(const MixtureSpec& spec,
                                                         int64_t batch_size, int64_t step) {
  spec.validate();
  const auto centers = class_centers(spec);
  auto draw = detail::draw_base(spec, centers, batch_size, step);
  std::vector<T> pts(draw.base.size());
  for (size_t i = 0; i < draw.base.size(); ++i) pts[i] = static_cast<T>(draw.base[i]);
  return {Tensor<T>::constant({batch_size, spec.input_dim}, std::move(pts)),
          std::move(draw.labels)};
}

// Writes the stream exactly as a trainer with this batch size sees it:
// one "x0,...,xD-1,label" row per base point, %.17g so values round-trip.
void export_points_csv(const MixtureSpec& spec, int64_t batch_size, int64_t first_step,
                       int64_t step_count, std::ostream& os);

struct PointSet {
  int64_t dim = 0;
  std::vector<double> points;  // N x dim
  std::vector<int32_t> labels;
  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

PointSet load_points_csv(std::istream& is);

}  // namespace excb
