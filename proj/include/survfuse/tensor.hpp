#pragma once

// Dense row-major tensors of doubles with a reverse-mode differentiation tape.
//
// A Tensor is a shared handle: copying it aliases the same buffers, which is
// how layers hand parameters to the optimizer. Use detach() for a deep copy.
// Operations record a backward rule on the thread's active Tape whenever one
// of their inputs requires a gradient; with no active tape they only compute,
// which makes inference on frozen weights free of shared mutable state.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "survfuse/error.hpp"

namespace survfuse::ad {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::optional<std::size_t> node;
};

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : data_(std::make_shared<TensorData>()) {
    const std::size_t n = shape_size(shape);
    data_->shape = std::move(shape);
    data_->value.assign(n, fill);
    data_->grad.assign(n, 0.0);
  }

  Tensor(Shape shape, std::vector<double> values) : data_(std::make_shared<TensorData>()) {
    if (shape_size(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    }
    data_->grad.assign(values.size(), 0.0);
    data_->shape = std::move(shape);
    data_->value = std::move(values);
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }
  static Tensor parameter(Shape shape, std::vector<double> v) {
    Tensor t(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t size() const { return data_->value.size(); }
  std::size_t rows() const { return rank() == 2 ? data_->shape[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? data_->shape[1] : data_->shape[0]; }

  std::span<const double> values() const { return data_->value; }
  std::span<double> values_mut() { return data_->value; }
  std::span<const double> grad() const { return data_->grad; }
  std::span<double> grad_mut() { return data_->grad; }

  double item() const {
    if (size() != 1) throw ContractViolation("item() on tensor of shape " + shape_str(shape()));
    return data_->value[0];
  }
  double operator[](std::size_t i) const { return data_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return data_->value[r * cols() + c]; }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool on) { data_->requires_grad = on; }
  std::optional<std::size_t> node_id() const { return data_->node; }

  void zero_grad() { std::fill(data_->grad.begin(), data_->grad.end(), 0.0); }

  Tensor detach() const { return Tensor(data_->shape, data_->value); }

  TensorData* impl() const { return data_.get(); }
  const std::shared_ptr<TensorData>& share() const { return data_; }

 private:
  std::shared_ptr<TensorData> data_;
};

// Ordered record of differentiable operations. Nodes are appended as the
// forward pass runs, so reverse construction order is a valid topological
// order for the backward sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() { detach_nodes(); }

  // Makes a tape (or no tape) the thread's active recorder for its lifetime.
  class Scope {
   public:
    explicit Scope(Tape* tape) : prev_(active_) { active_ = tape; }
    explicit Scope(Tape& tape) : Scope(&tape) {}
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope() { active_ = prev_; }

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_; }

  void record(const Tensor& out, std::initializer_list<const Tensor*> inputs,
              std::function<void()> backward) {
    for (const Tensor* in : inputs) {
      if (in->requires_grad() && !in->node_id() && leaf_set_.insert(in->impl()).second) {
        leaves_.push_back(in->share());
      }
    }
    out.impl()->requires_grad = true;
    out.impl()->node = nodes_.size();
    nodes_.push_back(Node{out.share(), std::move(backward)});
  }

  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw ContractViolation("backward requires a scalar loss, got shape " +
                              shape_str(loss.shape()));
    }
    if (!loss.node_id()) {
      if (loss.requires_grad()) loss.impl()->grad[0] += 1.0;
      return;
    }
    const std::size_t root = *loss.node_id();
    if (root >= nodes_.size() || nodes_[root].out.get() != loss.impl()) {
      throw ContractViolation("loss was not recorded on this tape");
    }
    for (auto& n : nodes_) std::fill(n.out->grad.begin(), n.out->grad.end(), 0.0);
    loss.impl()->grad[0] = 1.0;
    for (std::size_t i = root + 1; i-- > 0;) nodes_[i].backward();
  }

  // Zeroes every gradient the tape touched and forgets all nodes.
  void reset() {
    for (auto& n : nodes_) std::fill(n.out->grad.begin(), n.out->grad.end(), 0.0);
    for (auto& l : leaves_) std::fill(l->grad.begin(), l->grad.end(), 0.0);
    detach_nodes();
    nodes_.clear();
    leaves_.clear();
    leaf_set_.clear();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<TensorData> out;
    std::function<void()> backward;
  };

  void detach_nodes() {
    for (auto& n : nodes_) n.out->node.reset();
  }

  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<TensorData>> leaves_;
  std::unordered_set<const TensorData*> leaf_set_;
  inline static thread_local Tape* active_ = nullptr;
};

// Disables recording in the current scope.
class NoGrad {
 public:
  NoGrad() : scope_(static_cast<Tape*>(nullptr)) {}

 private:
  Tape::Scope scope_;
};

// Records, while alive, the argument of every piecewise op evaluated on this
// thread, shifted so the kink sits at zero. Comparing sign patterns of two
// evaluations tells whether a kink was crossed between them.
class KinkProbe {
 public:
  KinkProbe() : prev_(active_) { active_ = this; }
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;
  ~KinkProbe() { active_ = prev_; }

  static KinkProbe* active() { return active_; }
  void note(double shifted) { signs_.push_back(shifted > 0); }
  const std::vector<bool>& signs() const { return signs_; }

 private:
  std::vector<bool> signs_;
  KinkProbe* prev_;
  inline static thread_local KinkProbe* active_ = nullptr;
};

namespace detail {

inline void note_kinks(const Tensor& x, double at) {
  if (KinkProbe* probe = KinkProbe::active())
    for (double v : x.values()) probe->note(v - at);
}

inline Tape* recorder(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

inline CMapMat cmat(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return CMapMat(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MapMat mmat(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MapMat(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// Elementwise unary op; deriv(x, y) returns dy/dx at one coordinate.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D deriv) {
  Tensor out(x.shape());
  auto* xi = x.impl();
  auto* oi = out.impl();
  for (std::size_t i = 0; i < xi->value.size(); ++i) oi->value[i] = f(xi->value[i]);
  if (Tape* tape = recorder({&x})) {
    tape->record(out, {&x}, [xs = x.share(), oi, deriv] {
      if (!xs->requires_grad) return;
      for (std::size_t i = 0; i < xs->value.size(); ++i) {
        xs->grad[i] += oi->grad[i] * deriv(xs->value[i], oi->value[i]);
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto* oi = out.impl();
  for (std::size_t i = 0; i < oi->value.size(); ++i) oi->value[i] = a[i] + b[i];
  if (Tape* tape = detail::recorder({&a, &b})) {
    tape->record(out, {&a, &b}, [as = a.share(), bs = b.share(), oi] {
      for (auto* s : {as.get(), bs.get()}) {
        if (!s->requires_grad) continue;
        for (std::size_t i = 0; i < oi->grad.size(); ++i) s->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto* oi = out.impl();
  for (std::size_t i = 0; i < oi->value.size(); ++i) oi->value[i] = a[i] - b[i];
  if (Tape* tape = detail::recorder({&a, &b})) {
    tape->record(out, {&a, &b}, [as = a.share(), bs = b.share(), oi] {
      if (as->requires_grad)
        for (std::size_t i = 0; i < oi->grad.size(); ++i) as->grad[i] += oi->grad[i];
      if (bs->requires_grad)
        for (std::size_t i = 0; i < oi->grad.size(); ++i) bs->grad[i] -= oi->grad[i];
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto* oi = out.impl();
  for (std::size_t i = 0; i < oi->value.size(); ++i) oi->value[i] = a[i] * b[i];
  if (Tape* tape = detail::recorder({&a, &b})) {
    tape->record(out, {&a, &b}, [as = a.share(), bs = b.share(), oi] {
      const std::size_t n = oi->grad.size();
      if (as->requires_grad)
        for (std::size_t i = 0; i < n; ++i) as->grad[i] += oi->grad[i] * bs->value[i];
      if (bs->requires_grad)
        for (std::size_t i = 0; i < n; ++i) bs->grad[i] += oi->grad[i] * as->value[i];
    });
  }
  return out;
}

// x * s for a plain scalar s.
inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& x) {
  detail::note_kinks(x, 0.0);
  return detail::unary(x, [](double v) { return v > 0 ? v : 0.0; },
                       [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(x, [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; });
}

// log(max(x, floor)); the gradient is zero where the floor is active.
inline Tensor log_clamped(const Tensor& x, double floor) {
  for (double v : x.values()) {
    if (!(std::max(v, floor) > 0)) {
      throw DomainError("log of non-positive value after clamping: " + std::to_string(v));
    }
  }
  detail::note_kinks(x, floor);
  return detail::unary(x, [floor](double v) { return std::log(std::max(v, floor)); },
                       [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

// Scaled exponential linear unit.
inline Tensor selu(const Tensor& x, double alpha, double lambda) {
  detail::note_kinks(x, 0.0);
  return detail::unary(
      x, [=](double v) { return v > 0 ? lambda * v : lambda * alpha * (std::exp(v) - 1.0); },
      [=](double v, double) { return v > 0 ? lambda : lambda * alpha * std::exp(v); });
}

inline Tensor sum(const Tensor& x) {
  Tensor out(Shape{1});
  double s = 0.0;
  for (double v : x.values()) s += v;
  out.impl()->value[0] = s;
  if (Tape* tape = detail::recorder({&x})) {
    tape->record(out, {&x}, [xs = x.share(), oi = out.impl()] {
      for (double& g : xs->grad) g += oi->grad[0];
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  if (Tape* tape = detail::recorder({&x})) {
    tape->record(out, {&x}, [xs = x.share(), oi = out.impl()] {
      for (std::size_t i = 0; i < oi->grad.size(); ++i) xs->grad[i] += oi->grad[i];
    });
  }
  return out;
}

// Single element as a one-element tensor.
inline Tensor index(const Tensor& x, std::size_t i) {
  if (i >= x.size()) {
    throw DimensionError("index " + std::to_string(i) + " out of range for " +
                         shape_str(x.shape()));
  }
  Tensor out = Tensor::scalar(x[i]);
  if (Tape* tape = detail::recorder({&x})) {
    tape->record(out, {&x}, [xs = x.share(), oi = out.impl(), i] { xs->grad[i] += oi->grad[0]; });
  }
  return out;
}

// Contiguous sub-vector [begin, begin + length).
inline Tensor slice(const Tensor& x, std::size_t begin, std::size_t length) {
  if (x.rank() != 1 || begin + length > x.size()) {
    throw DimensionError("slice [" + std::to_string(begin) + ", +" + std::to_string(length) + ") of " +
                         shape_str(x.shape()));
  }
  Tensor out = Tensor::vector(std::vector<double>(x.values().begin() + static_cast<std::ptrdiff_t>(begin),
                                                  x.values().begin() + static_cast<std::ptrdiff_t>(begin + length)));
  if (Tape* tape = detail::recorder({&x})) {
    tape->record(out, {&x}, [xs = x.share(), oi = out.impl(), begin, length] {
      for (std::size_t i = 0; i < length; ++i) xs->grad[begin + i] += oi->grad[i];
    });
  }
  return out;
}

// Concatenation of two vectors.
inline Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) {
    throw DimensionError("concat expects vectors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<double> v(a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  Tensor out = Tensor::vector(std::move(v));
  if (Tape* tape = detail::recorder({&a, &b})) {
    tape->record(out, {&a, &b}, [as = a.share(), bs = b.share(), oi = out.impl()] {
      const std::size_t na = as->value.size();
      if (as->requires_grad)
        for (std::size_t i = 0; i < na; ++i) as->grad[i] += oi->grad[i];
      if (bs->requires_grad)
        for (std::size_t i = 0; i < bs->value.size(); ++i) bs->grad[i] += oi->grad[na + i];
    });
  }
  return out;
}

// Running product along a vector: out[r] = prod_{u<=r} x[u].
inline Tensor cumprod(const Tensor& x) {
  if (x.rank() != 1) throw DimensionError("cumprod expects a vector, got " + shape_str(x.shape()));
  const std::size_t n = x.size();
  Tensor out(x.shape());
  double p = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    p *= x[i];
    out.impl()->value[i] = p;
  }
  if (Tape* tape = detail::recorder({&x})) {
    tape->record(out, {&x}, [xs = x.share(), oi = out.impl(), n] {
      // Direct product rule; avoids dividing by coordinates that may be zero.
      for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t r = k; r < n; ++r) {
          double partial = 1.0;
          for (std::size_t u = 0; u <= r; ++u)
            if (u != k) partial *= xs->value[u];
          acc += oi->grad[r] * partial;
        }
        xs->grad[k] += acc;
      }
    });
  }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out(Shape{m, n});
  auto* ai = a.impl();
  auto* bi = b.impl();
  auto* oi = out.impl();
  detail::mmat(oi->value, m, n).noalias() = detail::cmat(ai->value, m, k) * detail::cmat(bi->value, k, n);
  if (Tape* tape = detail::recorder({&a, &b})) {
    tape->record(out, {&a, &b}, [as = a.share(), bs = b.share(), oi, m, k, n] {
      auto dc = detail::cmat(oi->grad, m, n);
      if (as->requires_grad)
        detail::mmat(as->grad, m, k).noalias() += dc * detail::cmat(bs->value, k, n).transpose();
      if (bs->requires_grad)
        detail::mmat(bs->grad, k, n).noalias() += detail::cmat(as->value, m, k).transpose() * dc;
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(Shape{n, m});
  detail::mmat(out.impl()->value, n, m) = detail::cmat(a.impl()->value, m, n).transpose();
  if (Tape* tape = detail::recorder({&a})) {
    tape->record(out, {&a}, [as = a.share(), oi = out.impl(), m, n] {
      detail::mmat(as->grad, m, n) += detail::cmat(oi->grad, n, m).transpose();
    });
  }
  return out;
}

// Affine map x·Wᵀ + b. x is a vector [in] or a row batch [rows x in]; W is
// [out x in]; bias may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw DimensionError("linear: weight must be a matrix");
  const std::size_t out_dim = weight.shape()[0], in_dim = weight.shape()[1];
  const bool batched = x.rank() == 2;
  const std::size_t rows = batched ? x.shape()[0] : 1;
  if ((x.rank() != 1 && x.rank() != 2) || x.cols() != in_dim) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.size() != out_dim)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  Tensor out(batched ? Shape{rows, out_dim} : Shape{out_dim});
  auto* xi = x.impl();
  auto* wi = weight.impl();
  auto* oi = out.impl();
  auto y = detail::mmat(oi->value, rows, out_dim);
  y.noalias() = detail::cmat(xi->value, rows, in_dim) * detail::cmat(wi->value, out_dim, in_dim).transpose();
  if (bias.defined()) {
    y.rowwise() += detail::CMapVec(bias.impl()->value.data(), static_cast<Eigen::Index>(out_dim)).transpose();
  }
  Tape* tape = bias.defined() ? detail::recorder({&x, &weight, &bias}) : detail::recorder({&x, &weight});
  if (tape) {
    auto rule = [xs = x.share(), ws = weight.share(), bs = bias.defined() ? bias.share() : nullptr,
                 oi, rows, in_dim, out_dim] {
      auto dy = detail::cmat(oi->grad, rows, out_dim);
      if (xs->requires_grad)
        detail::mmat(xs->grad, rows, in_dim).noalias() += dy * detail::cmat(ws->value, out_dim, in_dim);
      if (ws->requires_grad)
        detail::mmat(ws->grad, out_dim, in_dim).noalias() += dy.transpose() * detail::cmat(xs->value, rows, in_dim);
      if (bs && bs->requires_grad)
        detail::MapVec(bs->grad.data(), static_cast<Eigen::Index>(out_dim)) += dy.colwise().sum().transpose();
    };
    if (bias.defined())
      tape->record(out, {&x, &weight, &bias}, std::move(rule));
    else
      tape->record(out, {&x, &weight}, std::move(rule));
  }
  return out;
}

// Numerically stable softmax over a vector.
inline Tensor softmax(const Tensor& x) {
  if (x.size() == 0) throw PreconditionError("softmax of an empty tensor");
  if (x.rank() != 1) throw DimensionError("softmax expects a vector, got " + shape_str(x.shape()));
  const std::size_t n = x.size();
  Tensor out(x.shape());
  auto* oi = out.impl();
  const double mx = *std::max_element(x.values().begin(), x.values().end());
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    oi->value[i] = std::exp(x[i] - mx);
    z += oi->value[i];
  }
  for (double& v : oi->value) v /= z;
  if (Tape* tape = detail::recorder({&x})) {
    tape->record(out, {&x}, [xs = x.share(), oi, n] {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += oi->grad[i] * oi->value[i];
      for (std::size_t i = 0; i < n; ++i) xs->grad[i] += oi->value[i] * (oi->grad[i] - dot);
    });
  }
  return out;
}

// Runs f on a fresh tape and backpropagates; the gradient lands in `param`.
inline double evaluate_with_grad(const std::function<Tensor()>& f, Tensor& param) {
  Tape tape;
  Tape::Scope scope(tape);
  param.zero_grad();
  Tensor y = f();
  tape.backward(y);
  return y.item();
}

// Central finite-difference check of the analytic gradient of f with respect
// to a tensor that f reads (typically a model parameter). Perturbs `param` in
// place and restores it. Returns the largest per-coordinate relative error
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check_inplace(const std::function<Tensor()>& f, Tensor& param, double eps) {
  if (!(eps > 0 && eps <= 1e-3)) throw ParameterError("grad_check eps must lie in (0, 1e-3]");
  const bool had_grad = param.requires_grad();
  param.set_requires_grad(true);
  evaluate_with_grad(f, param);
  std::vector<double> analytic(param.grad().begin(), param.grad().end());
  param.zero_grad();

  NoGrad no_grad;
  auto values = param.values_mut();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + eps;
    const double fp = f().item();
    values[i] = orig - eps;
    const double fm = f().item();
    values[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  param.set_requires_grad(had_grad);
  return worst;
}

inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  return grad_check_inplace([&] { return f(leaf); }, leaf, eps);
}

}  // namespace survfuse::ad
