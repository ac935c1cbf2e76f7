#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crosslmm/error.hpp"

namespace crosslmm {

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

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace detail {

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // tape that produced this tensor, 0 for leaves
};

}  // namespace detail

/// Dense row-major tensor of doubles.
///
/// Tensor is a handle: copies share storage. Values are treated as immutable
/// once an op has produced them; parameters are the exception and are updated
/// in place by the optimizer through mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data) {
    if (shape.empty())
      throw DimensionError("tensor shape must have at least one extent");
    for (std::size_t e : shape)
      if (e == 0)
        throw DimensionError("tensor extents must be positive, got " +
                             shape_str(shape));
    if (shape_numel(shape) != data.size())
      throw DimensionError("shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(data.size()));
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorStorage>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }
  static Tensor filled(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }
  static Tensor scalar(double value) { return from({1}, {value}); }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data) {
    return from({rows, cols}, std::move(data));
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t rows() const { return impl_->shape.front(); }
  std::size_t cols() const {
    return impl_->shape.size() == 1 ? 1 : impl_->shape.back();
  }
  bool is_matrix() const { return rank() == 2; }
  bool is_scalar() const { return numel() == 1; }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const {
    return impl_->data[r * cols() + c];
  }
  double item() const {
    if (!is_scalar())
      throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient values; empty span if nothing was ever accumulated.
  std::span<const double> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated as zeros on first use.
  std::span<double> grad_buffer() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
  }
  void zero_grad() const {
    if (!impl_->grad.empty())
      std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }
  /// Gradient as a standalone tensor (zeros when absent).
  Tensor grad_tensor() const {
    if (impl_->grad.empty()) return zeros(shape());
    return from(shape(), impl_->grad);
  }

  std::optional<std::uint64_t> tape_id() const {
    if (impl_->tape_id == 0) return std::nullopt;
    return impl_->tape_id;
  }

  /// Deep copy without gradient or tape linkage.
  Tensor clone() const {
    Tensor t = from(shape(), impl_->data);
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool bitwise_equal(const Tensor& other) const {
    return shape() == other.shape() &&
           std::equal(impl_->data.begin(), impl_->data.end(),
                      other.impl_->data.begin(),
                      [](double x, double y) {
                        return std::memcmp(&x, &y, sizeof(double)) == 0;
                      });
  }

 private:
  friend class Tape;
  std::shared_ptr<detail::TensorStorage> impl_;
};

struct TapeOptions {
  bool record = true;    // keep nodes for backward
  bool checked = false;  // reject non-finite op outputs
};

/// Recording tape for reverse-mode differentiation.
///
/// Every op reports its multiply-accumulate count; only matmul contributes,
/// so the counter is an exact oracle for analytic matmul FLOP formulas.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;
  using LeafGradHook = std::function<void(const Tensor& leaf)>;

  Tape() : Tape(TapeOptions{}) {}
  explicit Tape(TapeOptions options) : options_(options), id_(next_id()) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  bool recording() const { return options_.record; }
  bool checked() const { return options_.checked; }
  std::uint64_t mac_count() const { return macs_; }
  void count_macs(std::uint64_t n) { macs_ += n; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Called after backward on every requires_grad leaf reached by the tape.
  void set_leaf_grad_hook(LeafGradHook hook) { hook_ = std::move(hook); }

  /// Registers an op output. `backward` receives d(loss)/d(out) and must
  /// accumulate into the grad buffers of inputs that require grad.
  Tensor emit(Tensor out, std::string_view op, std::vector<Tensor> inputs,
              BackwardFn backward) {
    if (options_.checked) {
      for (double v : out.data())
        if (!std::isfinite(v))
          throw NumericError(std::string(op) + " produced a non-finite value");
    }
    const bool needs = options_.record &&
                       std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) {
                                     return t.defined() && t.requires_grad();
                                   });
    if (needs) {
      out.impl_->requires_grad = true;
      out.impl_->tape_id = id_;
      nodes_.push_back(
          Node{op, std::move(inputs), out, std::move(backward)});
    }
    return out;
  }

  /// Fills grad of every requires_grad tensor on the tape with d(loss)/d(t).
  void backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar())
      throw ContractError("backward needs a scalar loss, got " +
                          (loss.defined() ? shape_str(loss.shape())
                                          : std::string("undefined")));
    std::vector<Tensor> leaves;
    std::unordered_set<const detail::TensorStorage*> seen;
    for (const Node& node : nodes_) {
      node.output.zero_grad();
      for (const Tensor& in : node.inputs) {
        if (!in.defined() || !in.requires_grad()) continue;
        in.grad_buffer();
        in.zero_grad();
        if (in.impl_->tape_id != id_ && seen.insert(in.impl_.get()).second)
          leaves.push_back(in);
      }
    }
    loss.grad_buffer()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->backward(it->output.grad());
    }
    if (hook_)
      for (const Tensor& leaf : leaves) hook_(leaf);
  }

 private:
  struct Node {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  TapeOptions options_;
  std::uint64_t id_;
  std::uint64_t macs_ = 0;
  std::vector<Node> nodes_;
  LeafGradHook hook_;
};

}  // namespace crosslmm
