#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nvae/tensor.hpp"

namespace nvae {

/// Named, insertion-ordered collection of trainable tensors and their gradient accumulators.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  Entry& add(std::string name, Tensor init);
  bool contains(std::string_view name) const;
  Entry& entry(std::string_view name);
  const Entry& entry(std::string_view name) const;
  const Tensor& value(std::string_view name) const { return entry(name).value; }
  /// Replaces a value; the shape must not change.
  void set_value(std::string_view name, Tensor value);

  std::deque<Entry>& entries() noexcept { return entries_; }
  const std::deque<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const noexcept;
  void zero_grad();

 private:
  std::deque<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the node's output gradient and writes into each parent's gradient
/// (entries are null for parents that do not require gradients).
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

/// Reverse-mode recording of one computation. Single-threaded; one tape per training step.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf that requires a gradient; read it with grad() after backward().
  Var variable(Tensor value);
  /// Leaf bound to a ParamStore entry. backward() adds into the entry's grad.
  Var param(ParamStore& store, std::string_view name);

  Var record(std::string_view op, Tensor value, std::span<const Var> parents, BackwardFn backward);
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
  }

  /// Gradients of a scalar root. Node gradients are reset first; ParamStore grads accumulate.
  void backward(Var root);
  /// Gradient from the last backward(); zeros if the node was not reached.
  Tensor grad(Var v) const;

  const Tensor& value(std::size_t id) const;
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::string_view op;
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* external_grad = nullptr;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
    Tensor grad;
  };

  Var push(Node node);
  std::deque<Node> nodes_;
};

/// Post-op NaN/Inf detection. On by default in debug builds, off under NDEBUG.
void set_finite_checks(bool enabled) noexcept;
bool finite_checks() noexcept;

// Elementwise binary ops. Operands have equal shapes, or one of them is a
// scalar, a (1 x n) row broadcast over rows, or an (m x 1) column broadcast over columns.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var square(Var a);
Var exp(Var a);
/// Throws NonFiniteError on any non-positive input.
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var log_gamma(Var a);
Var digamma(Var a);

Var matmul(Var a, Var b);

/// Sum of all elements, shape (1).
Var sum(Var a);
/// axis 0: column sums (1 x n); axis 1: row sums (m x 1).
Var sum(Var a, int axis);
Var mean(Var a);
Var mean(Var a, int axis);

Var reshape(Var a, Shape shape);
/// Concatenation of matrices along rows (axis 0) or columns (axis 1).
Var concat(std::span<const Var> parts, int axis);
inline Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}
/// Rows (axis 0) or columns (axis 1) in [begin, end).
Var slice(Var a, int axis, std::size_t begin, std::size_t end);

/// Row-wise log(sum(exp(row))), shape (m x 1), computed with a max shift.
Var logsumexp(Var a);
Var log_softmax(Var a);
/// Element (i, index[i]) of each row, shape (m x 1).
Var pick(Var a, std::span<const std::size_t> index);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, Var a) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, Var a) { return add_scalar(neg(a), c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }

}  // namespace nvae
