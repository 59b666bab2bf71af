#pragma once

// Student/teacher towers. The student runs encoder -> projector ->
// (predictor) -> centroid layer; the teacher mirrors it without the
// predictor. Centroid rows are re-normalized at similarity time, so
// gradients flow through the normalization unless a path detaches them:
// projector similarities keep centroid gradients for global views only,
// and every predictor similarity detaches the centroids. Teacher
// evaluation never touches a tape. Teacher weights move only through
// ema_update.

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <excb/rng.hpp>
#include <excb/tensor.hpp>

namespace excb {

template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::shared_ptr<std::vector<T>> grad = std::make_shared<std::vector<T>>();
  std::vector<T> velocity;
  bool centroid_group = false;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }

  // Leaf on the step's tape; backward accumulates into this->grad.
  Tensor<T> bind(Tape<T>& tape) const { return Tensor<T>::variable(tape, shape, value, grad); }
  Tensor<T> as_constant() const { return Tensor<T>::constant(shape, value); }

  bool grads_populated() const { return !grad->empty(); }
  void clear_grad() { grad->clear(); }
};

struct ModelConfig {
  int64_t input_dim = 32;
  std::vector<int64_t> encoder_hidden{64};
  int64_t embedding_dim = 32;
  int64_t projector_hidden = 128;
  int64_t projector_out = 32;
  int64_t clusters = 64;
  uint64_t seed = 0;

  void validate() const {
    if (input_dim < 1 || embedding_dim < 1 || projector_hidden < 1 || projector_out < 1)
      throw std::invalid_argument("model: dimensions must be positive");
    if (encoder_hidden.empty() || encoder_hidden.size() > 2)
      throw std::invalid_argument("model: encoder takes one or two hidden layers");
    for (int64_t h : encoder_hidden)
      if (h < 1) throw std::invalid_argument("model: encoder hidden size must be positive");
    if (clusters < 2) throw std::invalid_argument("model: needs at least 2 clusters");
  }
};

// Affine chain with relu between layers (none after the last).
// `bound` is the leaf/constant list [W0, b0, W1, b1, ...].
template <typename T>
Tensor<T> mlp_forward(const std::vector<Tensor<T>>& bound, const Tensor<T>& x) {
  Tensor<T> h = x;
  for (size_t l = 0; l + 1 < bound.size(); l += 2) {
    h = bias_add(matmul(h, bound[l]), bound[l + 1]);
    if (l + 2 < bound.size()) h = relu(h);
  }
  return h;
}

// Cosine similarities against row-normalized centroids. With
// detach_centroids the rows enter as constants: identical forward value,
// no centroid gradient.
template <typename T>
Tensor<T> centroid_similarities(const Tensor<T>& x, const Tensor<T>& centroids,
                                bool detach_centroids) {
  Tensor<T> xn = row_l2_normalize(x);
  Tensor<T> cn = row_l2_normalize(centroids, detach_centroids);
  return matmul(xn, transpose(cn));
}

template <typename T>
struct StudentOutputs {
  std::vector<Tensor<T>> z_h_global;  // projector path, centroid grads enabled
  std::vector<Tensor<T>> z_h_local;   // projector path, centroid rows detached
  std::vector<Tensor<T>> z_g;         // predictor path over globals then locals, detached
};

template <typename T>
class ModelPair {
 public:
  explicit ModelPair(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed, Stream::model_init);

    std::vector<int64_t> enc_dims{cfg.input_dim};
    enc_dims.insert(enc_dims.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
    enc_dims.push_back(cfg.embedding_dim);
    init_mlp(student_.encoder, "enc", enc_dims, rng);

    init_mlp(student_.projector, "proj",
             {cfg.embedding_dim, cfg.projector_hidden, cfg.projector_out}, rng);
    init_mlp(student_.predictor, "pred", {cfg.projector_out, cfg.projector_out}, rng);

    auto& c = student_.centroids;
    c.name = "centroids";
    c.shape = {cfg.clusters, cfg.projector_out};
    c.centroid_group = true;
    c.value.resize(static_cast<size_t>(cfg.clusters * cfg.projector_out));
    for (int64_t k = 0; k < cfg.clusters; ++k) {
      T* row = c.value.data() + k * cfg.projector_out;
      double sq = 0.0;
      for (int64_t t = 0; t < cfg.projector_out; ++t) {
        row[t] = static_cast<T>(rng.next_normal());
        sq += static_cast<double>(row[t]) * static_cast<double>(row[t]);
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(sq));
      for (int64_t t = 0; t < cfg.projector_out; ++t) row[t] *= inv;
    }

    // teacher starts as a copy of the shared components
    teacher_.encoder = student_.encoder;
    teacher_.projector = student_.projector;
    teacher_.centroids = student_.centroids;
    for (auto* p : teacher_parameters()) {
      p->name = "t." + p->name;
      p->grad = std::make_shared<std::vector<T>>();
      p->velocity.clear();
    }
  }

  const ModelConfig& config() const { return cfg_; }

  StudentOutputs<T> student_similarities(Tape<T>& tape, const std::vector<Tensor<T>>& global_views,
                                         const std::vector<Tensor<T>>& local_views) {
    std::vector<Tensor<T>> enc = bind_all(tape, student_.encoder);
    std::vector<Tensor<T>> proj = bind_all(tape, student_.projector);
    std::vector<Tensor<T>> pred = bind_all(tape, student_.predictor);
    Tensor<T> cent = student_.centroids.bind(tape);

    StudentOutputs<T> out;
    auto run_view = [&](const Tensor<T>& x, bool global) {
      Tensor<T> h = mlp_forward(proj, mlp_forward(enc, x));
      Tensor<T> z_h = centroid_similarities(h, cent, /*detach_centroids=*/!global);
      Tensor<T> z_g = centroid_similarities(mlp_forward(pred, h), cent, /*detach_centroids=*/true);
      (global ? out.z_h_global : out.z_h_local).push_back(z_h);
      out.z_g.push_back(z_g);
    };
    for (const auto& x : global_views) run_view(x, true);
    for (const auto& x : local_views) run_view(x, false);
    return out;
  }

  // Frozen teacher: everything is a constant, no tape nodes anywhere.
  std::vector<Tensor<T>> teacher_similarities(const std::vector<Tensor<T>>& views) const {
    std::vector<Tensor<T>> enc = constants(teacher_.encoder);
    std::vector<Tensor<T>> proj = constants(teacher_.projector);
    Tensor<T> cent = teacher_.centroids.as_constant();
    std::vector<Tensor<T>> out;
    out.reserve(views.size());
    for (const auto& x : views) {
      Tensor<T> v = x.on_tape() ? x.detach() : x;
      out.push_back(centroid_similarities(mlp_forward(proj, mlp_forward(enc, v)), cent, true));
    }
    return out;
  }

  // h_t(f_t(x)), for embedding export.
  Tensor<T> teacher_embeddings(const Tensor<T>& points) const {
    return mlp_forward(constants(teacher_.projector),
                       mlp_forward(constants(teacher_.encoder), points));
  }

  std::vector<Parameter<T>*> student_parameters() {
    std::vector<Parameter<T>*> out;
    collect(student_.encoder, out);
    collect(student_.projector, out);
    collect(student_.predictor, out);
    out.push_back(&student_.centroids);
    return out;
  }

  std::vector<Parameter<T>*> teacher_parameters() {
    std::vector<Parameter<T>*> out;
    collect(teacher_.encoder, out);
    collect(teacher_.projector, out);
    out.push_back(&teacher_.centroids);
    return out;
  }

  const Parameter<T>& student_centroids() const { return student_.centroids; }

  void zero_grad() {
    for (auto* p : student_parameters()) p->clear_grad();
  }

  // Momentum SGD with decoupled weight decay: the decay term never
  // enters the velocity. Centroids use their own (scheduled) decay.
  void sgd_step(double lr, double momentum, double centroid_wd, double base_wd) {
    for (auto* p : student_parameters()) {
      if (!p->grads_populated())
        throw std::logic_error("sgd_step: gradients not populated for " + p->name);
      if (p->velocity.empty()) p->velocity.assign(p->value.size(), T(0));
      const T mu = static_cast<T>(momentum);
      const T step = static_cast<T>(lr);
      const T wd = static_cast<T>(p->centroid_group ? centroid_wd : base_wd);
      const auto& g = *p->grad;
      for (size_t i = 0; i < p->value.size(); ++i) {
        p->velocity[i] = mu * p->velocity[i] + g[i];
        p->value[i] -= step * (p->velocity[i] + wd * p->value[i]);
      }
    }
  }

  // theta_t = m * theta_t + (1 - m) * theta_s for every shared parameter,
  // centroids included. m = 1 and m = 0 are exact no-op / copy.
  void ema_update(double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("ema_update: momentum outside [0, 1]");
    if (m == 1.0) return;
    auto pairs = shared_pairs();
    if (m == 0.0) {
      for (auto& [s, t] : pairs) t->value = s->value;
      return;
    }
    const T mm = static_cast<T>(m);
    const T one_minus = static_cast<T>(1.0 - m);
    for (auto& [s, t] : pairs)
      for (size_t i = 0; i < t->value.size(); ++i)
        t->value[i] = mm * t->value[i] + one_minus * s->value[i];
  }

 private:
  struct Tower {
    std::vector<Parameter<T>> encoder;    // W, b per layer
    std::vector<Parameter<T>> projector;  // W, b per layer
    std::vector<Parameter<T>> predictor;  // single affine layer (student only)
    Parameter<T> centroids;
  };

  static void init_mlp(std::vector<Parameter<T>>& dst, const std::string& prefix,
                       const std::vector<int64_t>& dims, Rng& rng) {
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      Parameter<T> w;
      w.name = prefix + ".w" + std::to_string(l);
      w.shape = {dims[l], dims[l + 1]};
      w.value.resize(static_cast<size_t>(dims[l] * dims[l + 1]));
      const double std_dev = 1.0 / std::sqrt(static_cast<double>(dims[l]));
      for (auto& v : w.value) v = static_cast<T>(std_dev * rng.next_normal());
      dst.push_back(std::move(w));

      Parameter<T> b;
      b.name = prefix + ".b" + std::to_string(l);
      b.shape = {dims[l + 1]};
      b.value.assign(static_cast<size_t>(dims[l + 1]), T(0));
      dst.push_back(std::move(b));
    }
  }

  static std::vector<Tensor<T>> bind_all(Tape<T>& tape, const std::vector<Parameter<T>>& ps) {
    std::vector<Tensor<T>> out;
    out.reserve(ps.size());
    for (const auto& p : ps) out.push_back(p.bind(tape));
    return out;
  }

  static std::vector<Tensor<T>> constants(const std::vector<Parameter<T>>& ps) {
    std::vector<Tensor<T>> out;
    out.reserve(ps.size());
    for (const auto& p : ps) out.push_back(p.as_constant());
    return out;
  }

  static void collect(std::vector<Parameter<T>>& ps, std::vector<Parameter<T>*>& out) {
    for (auto& p : ps) out.push_back(&p);
  }

  std::vector<std::pair<Parameter<T>*, Parameter<T>*>> shared_pairs() {
    std::vector<std::pair<Parameter<T>*, Parameter<T>*>> out;
    for (size_t i = 0; i < student_.encoder.size(); ++i)
      out.emplace_back(&student_.encoder[i], &teacher_.encoder[i]);
    for (size_t i = 0; i < student_.projector.size(); ++i)
      out.emplace_back(&student_.projector[i], &teacher_.projector[i]);
    out.emplace_back(&student_.centroids, &teacher_.centroids);
    return out;
  }

  ModelConfig cfg_;
  Tower student_;
  Tower teacher_;
};

}  // namespace excb
