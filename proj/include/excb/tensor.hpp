#pragma once

// Dense row-major tensors with a minimal reverse-mode tape.
//
// Covers exactly the operations the clustering model needs: matmul,
// transpose, row L2 normalization (with optional graph detach), relu,
// add/sub/scale, bias_add, tempered row softmax, row cross-entropy, and
// backward(). Tensors are immutable once built; a tape is built per
// training step and discarded. Reductions run in fixed order, so
// identical input bits give identical output and gradient bits.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace excb {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
class Tape;

// Reverse-mode tape. Nodes are appended in forward order; every node's
// inputs precede it. backward() traverses in strict reverse insertion
// order and freezes the tape against further growth.
template <typename T>
class Tape {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf node: gradient accumulates into `sink` (resized lazily).
  int64_t add_leaf(int64_t numel, std::shared_ptr<std::vector<T>> sink) {
    require_open();
    nodes_.push_back(Node{numel, nullptr, std::move(sink)});
    return static_cast<int64_t>(nodes_.size()) - 1;
  }

  // Interior node: `pull` receives the node's upstream gradient and
  // pushes contributions into its inputs via accumulate().
  int64_t add_node(int64_t numel, std::function<void(Tape&, std::span<const T>)> pull) {
    require_open();
    nodes_.push_back(Node{numel, std::move(pull), nullptr});
    return static_cast<int64_t>(nodes_.size()) - 1;
  }

  size_t size() const { return nodes_.size(); }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  void accumulate(int64_t node, std::span<const T> g) {
    auto& w = work_[static_cast<size_t>(node)];
    if (w.empty()) w.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].numel), T(0));
    for (size_t i = 0; i < g.size(); ++i) w[i] += g[i];
  }

  // Propagates a unit seed at `root` back to every leaf at or before it.
  // Leaf sinks of participating leaves are zero-filled even when no
  // gradient path reaches them, and accumulate across repeated calls.
  void backward_from(int64_t root) {
    if (root < 0 || root >= static_cast<int64_t>(nodes_.size()))
      throw std::logic_error("tensor: backward root is not on this tape");
    freeze();
    work_.assign(nodes_.size(), {});
    work_[static_cast<size_t>(root)].assign(
        static_cast<size_t>(nodes_[static_cast<size_t>(root)].numel), T(1));
    for (int64_t i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.pull) {
        auto& w = work_[static_cast<size_t>(i)];
        if (!w.empty()) n.pull(*this, std::span<const T>(w));
      } else if (n.sink) {
        auto& sink = *n.sink;
        if (sink.empty()) sink.assign(static_cast<size_t>(n.numel), T(0));
        auto& w = work_[static_cast<size_t>(i)];
        for (size_t j = 0; j < w.size(); ++j) sink[j] += w[j];
      }
    }
    work_.clear();
    work_.shrink_to_fit();
  }

 private:
  struct Node {
    int64_t numel = 0;
    std::function<void(Tape&, std::span<const T>)> pull;  // null for leaves
    std::shared_ptr<std::vector<T>> sink;                 // leaves only
  };

  void require_open() const {
    if (frozen_) throw std::logic_error("tensor: tape is frozen");
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> work_;
  bool frozen_ = false;
};

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<T> values) {
    check_sizes(shape, values);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<T>>(std::move(values));
    return t;
  }

  static Tensor scalar(T v) { return constant({}, {v}); }

  // Differentiable leaf with an internally owned gradient buffer.
  static Tensor variable(Tape<T>& tape, Shape shape, std::vector<T> values) {
    return variable(tape, std::move(shape), std::move(values), std::make_shared<std::vector<T>>());
  }

  // Differentiable leaf accumulating into an external gradient buffer
  // (model parameters keep theirs across tape rebuilds).
  static Tensor variable(Tape<T>& tape, Shape shape, std::vector<T> values,
                         std::shared_ptr<std::vector<T>> grad_sink) {
    check_sizes(shape, values);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<T>>(std::move(values));
    t.grad_ = std::move(grad_sink);
    t.tape_ = &tape;
    t.node_ = tape.add_leaf(t.numel(), t.grad_);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
  int64_t rows() const { return shape_.at(0); }
  int64_t cols() const { return shape_.at(1); }

  std::span<const T> values() const {
    return data_ ? std::span<const T>(*data_) : std::span<const T>();
  }
  const std::shared_ptr<const std::vector<T>>& buffer() const { return data_; }

  T value() const {
    if (numel() != 1) throw std::invalid_argument("tensor: value() needs a scalar");
    return (*data_)[0];
  }
  T at(int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
  T at(int64_t i, int64_t j) const { return (*data_)[static_cast<size_t>(i * cols() + j)]; }

  bool on_tape() const { return node_ >= 0; }
  int64_t node() const { return node_; }
  Tape<T>* tape() const { return tape_; }

  // Leaf gradient; empty until a backward pass has covered this leaf.
  std::span<const T> grad() const {
    return grad_ ? std::span<const T>(*grad_) : std::span<const T>();
  }
  const std::shared_ptr<std::vector<T>>& grad_buffer() const { return grad_; }

  // Same values, no tape participation.
  Tensor detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  // Internal: op result constructor.
  static Tensor from_op(Tape<T>* tape, Shape shape, std::vector<T> values,
                        std::function<void(Tape<T>&, std::span<const T>)> pull) {
    check_sizes(shape, values);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<T>>(std::move(values));
    if (tape && pull) {
      t.tape_ = tape;
      t.node_ = tape->add_node(t.numel(), std::move(pull));
    }
    return t;
  }

 private:
  static void check_sizes(const Shape& shape, const std::vector<T>& values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("tensor: data length does not match shape " + shape_str(shape));
  }

  std::shared_ptr<const std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
  Shape shape_;
  Tape<T>* tape_ = nullptr;
  int64_t node_ = -1;
};

namespace detail {

template <typename T>
Tape<T>* merge_tapes(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* t : inputs) {
    if (!t->tape()) continue;
    if (tape && tape != t->tape())
      throw std::logic_error("tensor: operands live on different tapes");
    tape = t->tape();
  }
  return tape;
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace detail

// c = a @ b for a: MxD, b: DxK.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int64_t m = a.rows(), d = a.cols(), k = b.cols();
  std::vector<T> out(static_cast<size_t>(m * k), T(0));
  {
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t t = 0; t < d; ++t) {
        const T aval = pa[i * d + t];
        const T* brow = pb + t * k;
        T* crow = out.data() + i * k;
        for (int64_t j = 0; j < k; ++j) crow[j] += aval * brow[j];
      }
  }

  Tape<T>* tape = detail::merge_tapes<T>({&a, &b});
  std::function<void(Tape<T>&, std::span<const T>)> pull;
  if (tape) {
    auto da = a.buffer();
    auto db = b.buffer();
    const int64_t na = a.node(), nb = b.node();
    pull = [da, db, na, nb, m, d, k](Tape<T>& tp, std::span<const T> g) {
      if (na >= 0) {
        std::vector<T> ga(static_cast<size_t>(m * d), T(0));
        const T* pb = db->data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < k; ++j) {
            const T gv = g[static_cast<size_t>(i * k + j)];
            const T* brow = pb + j;  // column j
            for (int64_t t = 0; t < d; ++t) ga[static_cast<size_t>(i * d + t)] += gv * brow[t * k];
          }
        tp.accumulate(na, ga);
      }
      if (nb >= 0) {
        std::vector<T> gb(static_cast<size_t>(d * k), T(0));
        const T* pa = da->data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t t = 0; t < d; ++t) {
            const T av = pa[i * d + t];
            T* gbrow = gb.data() + t * k;
            const T* grow = g.data() + i * k;
            for (int64_t j = 0; j < k; ++j) gbrow[j] += av * grow[j];
          }
        tp.accumulate(nb, gb);
      }
    };
  }
  return Tensor<T>::from_op(tape, {m, k}, std::move(out), std::move(pull));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank2(a, "transpose");
  const int64_t m = a.rows(), n = a.cols();
  std::vector<T> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = a.at(i, j);

  Tape<T>* tape = detail::merge_tapes<T>({&a});
  std::function<void(Tape<T>&, std::span<const T>)> pull;
  if (tape && a.on_tape()) {
    const int64_t na = a.node();
    pull = [na, m, n](Tape<T>& tp, std::span<const T> g) {
      std::vector<T> ga(static_cast<size_t>(m * n));
      for (int64_t j = 0; j < n; ++j)
        for (int64_t i = 0; i < m; ++i)
          ga[static_cast<size_t>(i * n + j)] = g[static_cast<size_t>(j * m + i)];
      tp.accumulate(na, ga);
    };
  }
  return Tensor<T>::from_op(tape, {n, m}, std::move(out), std::move(pull));
}

// Rows scaled to unit Euclidean norm. With detach_graph the result is a
// constant: forward value identical, no gradient flows back.
template <typename T>
Tensor<T> row_l2_normalize(const Tensor<T>& a, bool detach_graph = false) {
  detail::require_rank2(a, "row_l2_normalize");
  const int64_t m = a.rows(), n = a.cols();
  std::vector<T> out(static_cast<size_t>(m * n));
  std::vector<T> norms(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    T sq = T(0);
    for (int64_t j = 0; j < n; ++j) {
      const T v = a.at(i, j);
      sq += v * v;
    }
    const T r = std::sqrt(sq);
    if (!(r >= T(1e-12)))
      throw std::domain_error("row_l2_normalize: degenerate row " + std::to_string(i));
    norms[static_cast<size_t>(i)] = r;
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i * n + j)] = a.at(i, j) / r;
  }

  Tape<T>* tape = detach_graph ? nullptr : detail::merge_tapes<T>({&a});
  std::function<void(Tape<T>&, std::span<const T>)> pull;
  if (tape && a.on_tape()) {
    const int64_t na = a.node();
    auto y = std::make_shared<std::vector<T>>(out);
    auto r = std::make_shared<std::vector<T>>(std::move(norms));
    pull = [na, y, r, m, n](Tape<T>& tp, std::span<const T> g) {
      std::vector<T> ga(static_cast<size_t>(m * n));
      for (int64_t i = 0; i < m; ++i) {
        const T* yi = y->data() + i * n;
        const T* gi = g.data() + i * n;
        T dot = T(0);
        for (int64_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
        const T inv = T(1) / (*r)[static_cast<size_t>(i)];
        for (int64_t j = 0; j < n; ++j)
          ga[static_cast<size_t>(i * n + j)] = (gi[j] - dot * yi[j]) * inv;
      }
      tp.accumulate(na, ga);
    };
  }
  return Tensor<T>::from_op(tape, {m, n}, std::move(out), std::move(pull));
}

// relu; the subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (T& v : out) v = v > T(0) ? v : T(0);

  Tape<T>* tape = detail::merge_tapes<T>({&a});
  std::function<void(Tape<T>&, std::span<const T>)> pull;
  if (tape && a.on_tape()) {
    const int64_t na = a.node();
    auto x = a.buffer();
    pull = [na, x](Tape<T>& tp, std::span<const T> g) {
      std::vector<T> ga(g.size());
      for (size_t i = 0; i < g.size(); ++i) ga[i] = (*x)[i] > T(0) ? g[i] : T(0);
      tp.accumulate(na, ga);
    };
  }
  return Tensor<T>::from_op(tape, a.shape(), std::move(out), std::move(pull));
}

namespace detail {

template <typename T>
Tensor<T> elementwise_linear(const Tensor<T>& a, const Tensor<T>& b, T sign, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i)
    out[static_cast<size_t>(i)] = a.values()[static_cast<size_t>(i)] + sign * b.values()[static_cast<size_t>(i)];

  Tape<T>* tape = merge_tapes<T>({&a, &b});
  std::function<void(Tape<T>&, std::span<const T>)> pull;
  if (tape) {
    const int64_t na = a.node(), nb = b.node();
    pull = [na, nb, sign](Tape<T>& tp, std::span<const T> g) {
      if (na >= 0) tp.accumulate(na, g);
      if (nb >= 0) {
        if (sign == T(1)) {
          tp.accumulate(nb, g);
        } else {
          std::vector<T> gb(g.size());
          for (size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
          tp.accumulate(nb, gb);
        }
      }
    };
  }
  return Tensor<T>::from_op(tape, a.shape(), std::move(out), std::move(pull));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise_linear(a, b, T(1), "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise_linear(a, b, T(-1), "sub");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (T& v : out) v *= c;

  Tape<T>* tape = detail::merge_tapes<T>({&a});
  std::function<void(Tape<T>&, std::span<const T>)> pull;
  if (tape && a.on_tape()) {
    const int64_t na = a.node();
    pull = [na, c](Tape<T>& tp, std::span<const T> g) {
      std::vector<T> ga(g.size());
      for (size_t i = 0; i < g.size(); ++i) ga[i] = c * g[i];
      tp.accumulate(na, ga);
    };
  }
  return Tensor<T>::from_op(tape, a.shape(), std::move(out), std::move(pull));
}

// y[i,j] = a[i,j] + b[j] for a: MxN, b: length-N vector.
template <typename T>
Tensor<T> bias_add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "bias_add");
  if (b.rank() != 1 || b.numel() != a.cols())
    throw std::invalid_argument("bias_add: bias " + shape_str(b.shape()) +
                                " does not broadcast over " + shape_str(a.shape()));
  const int64_t m = a.rows(), n = a.cols();
  std::vector<T> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out[static_cast<size_t>(i * n + j)] = a.at(i, j) + b.at(j);

  Tape<T>* tape = detail::merge_tapes<T>({&a, &b});
  std::function<void(Tape<T>&, std::span<const T>)> pull;
  if (tape) {
    const int64_t na = a.node(), nb = b.node();
    pull = [na, nb, m, n](Tape<T>& tp, std::span<const T> g) {
      if (na >= 0) tp.accumulate(na, g);
      if (nb >= 0) {
        std::vector<T> gb(static_cast<size_t>(n), T(0));
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) gb[static_cast<size_t>(j)] += g[static_cast<size_t>(i * n + j)];
        tp.accumulate(nb, gb);
      }
    };
  }
  return Tensor<T>::from_op(tape, {m, n}, std::move(out), std::move(pull));
}

// Row softmax of z / temperature, computed with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& z, T temperature) {
  detail::require_rank2(z, "softmax_rows");
  if (!(temperature > T(0)) || !std::isfinite(static_cast<double>(temperature)))
    throw std::invalid_argument("softmax_rows: temperature must be positive");
  const int64_t m = z.rows(), k = z.cols();
  std::vector<T> out(static_cast<size_t>(m * k));
  for (int64_t i = 0; i < m; ++i) {
    T mx = z.at(i, 0);
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, z.at(i, j));
    T sum = T(0);
    for (int64_t j = 0; j < k; ++j) {
      const T e = std::exp((z.at(i, j) - mx) / temperature);
      out[static_cast<size_t>(i * k + j)] = e;
      sum += e;
    }
    for (int64_t j = 0; j < k; ++j) out[static_cast<size_t>(i * k + j)] /= sum;
  }

  Tape<T>* tape = detail::merge_tapes<T>({&z});
  std::function<void(Tape<T>&, std::span<const T>)> pull;
  if (tape && z.on_tape()) {
    const int64_t nz = z.node();
    auto p = std::make_shared<std::vector<T>>(out);
    pull = [nz, p, m, k, temperature](Tape<T>& tp, std::span<const T> g) {
      std::vector<T> gz(static_cast<size_t>(m * k));
      for (int64_t i = 0; i < m; ++i) {
        const T* pi = p->data() + i * k;
        const T* gi = g.data() + i * k;
        T dot = T(0);
        for (int64_t j = 0; j < k; ++j) dot += gi[j] * pi[j];
        for (int64_t j = 0; j < k; ++j)
          gz[static_cast<size_t>(i * k + j)] = pi[j] * (gi[j] - dot) / temperature;
      }
      tp.accumulate(nz, gz);
    };
  }
  return Tensor<T>::from_op(tape, {m, k}, std::move(out), std::move(pull));
}

// Mean over rows of -sum_k target * log(pred), with pred clamped to
// 1e-12 inside the log. Gradient flows into pred only; the target is
// treated as a constant even when it sits on a tape.
template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& target, const Tensor<T>& pred) {
  detail::require_rank2(target, "cross_entropy_rows");
  detail::require_rank2(pred, "cross_entropy_rows");
  if (target.shape() != pred.shape())
    throw std::invalid_argument("cross_entropy_rows: shape mismatch " + shape_str(target.shape()) +
                                " vs " + shape_str(pred.shape()));
  const int64_t m = target.rows(), k = target.cols();
  constexpr T kLogClamp = T(1e-12);
  T total = T(0);
  for (int64_t i = 0; i < m; ++i) {
    T row = T(0);
    for (int64_t j = 0; j < k; ++j) {
      const T p = pred.at(i, j);
      if (p < T(0)) throw std::domain_error("cross_entropy_rows: negative probability");
      row -= target.at(i, j) * std::log(std::max(p, kLogClamp));
    }
    total += row;
  }
  total /= static_cast<T>(m);

  Tape<T>* tape = detail::merge_tapes<T>({&target, &pred});
  std::function<void(Tape<T>&, std::span<const T>)> pull;
  if (tape && pred.on_tape()) {
    const int64_t np = pred.node();
    auto dt = target.buffer();
    auto dp = pred.buffer();
    pull = [np, dt, dp, m, k](Tape<T>& tp, std::span<const T> g) {
      const T gv = g[0];
      std::vector<T> gp(static_cast<size_t>(m * k), T(0));
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j) {
          const size_t idx = static_cast<size_t>(i * k + j);
          const T p = (*dp)[idx];
          if (p > kLogClamp)
            gp[idx] = -gv * (*dt)[idx] / (p * static_cast<T>(m));
        }
      tp.accumulate(np, gp);
    };
  }
  return Tensor<T>::from_op(tape, {}, {total}, std::move(pull));
}

// Seeds d(loss)/d(loss) = 1 and fills every participating leaf's
// gradient buffer. Repeated calls without clearing accumulate.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (!loss.on_tape())
    throw std::logic_error("backward: loss is a constant with no tape");
  loss.tape()->backward_from(loss.node());
}

}  // namespace excb
