#include "nvae/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "nvae/error.hpp"
#include "nvae/special.hpp"

namespace nvae {

// ---------------------------------------------------------------------------
// ParamStore

ParamStore::Entry& ParamStore::add(std::string name, Tensor init) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  Tensor grad(init.shape());
  entries_.push_back(Entry{std::move(name), std::move(init), std::move(grad)});
  return entries_.back();
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

ParamStore::Entry& ParamStore::entry(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named " + std::string(name));
  return entries_[it->second];
}

const ParamStore::Entry& ParamStore::entry(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named " + std::string(name));
  return entries_[it->second];
}

void ParamStore::set_value(std::string_view name, Tensor value) {
  Entry& e = entry(name);
  if (value.shape() != e.value.shape())
    throw ShapeError("parameter " + e.name + " has shape " + to_string(e.value.shape()) +
                     ", cannot assign " + to_string(value.shape()));
  e.value = std::move(value);
}

std::size_t ParamStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) std::fill(e.grad.data().begin(), e.grad.data().end(), 0.0);
}

// ---------------------------------------------------------------------------
// Tape

namespace {

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

}  // namespace

void set_finite_checks(bool enabled) noexcept { g_finite_checks.store(enabled); }
bool finite_checks() noexcept { return g_finite_checks.load(); }

const Tensor& Var::value() const { return tape_->value(id_); }

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.owned;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.op = "variable";
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(ParamStore& store, std::string_view name) {
  auto& e = store.entry(name);
  Node n;
  n.op = "param";
  n.external = &e.value;
  n.external_grad = &e.grad;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> parents, BackwardFn backward) {
  if (finite_checks() && !value.all_finite())
    throw NonFiniteError("op '" + std::string(op) + "' produced a non-finite value, shape " +
                         to_string(value.shape()));
  Node n;
  n.op = op;
  n.owned = std::move(value);
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (p.tape_ != this) throw std::invalid_argument("op '" + std::string(op) + "' mixes tapes");
    n.parents.push_back(p.id_);
    n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw std::invalid_argument("backward root belongs to another tape");
  const Tensor& rv = value(root.id_);
  if (rv.size() != 1) throw ShapeError("backward needs a scalar root, got " + to_string(rv.shape()));

  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  Node& r = nodes_[root.id_];
  r.grad = Tensor(rv.shape(), 1.0);
  r.has_grad = true;

  std::vector<Tensor*> parent_grads;
  for (std::size_t id = root.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.backward) {
      parent_grads.assign(n.parents.size(), nullptr);
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        Node& p = nodes_[n.parents[k]];
        if (!p.requires_grad) continue;
        if (!p.has_grad) {
          p.grad = Tensor(value(n.parents[k]).shape());
          p.has_grad = true;
        }
        parent_grads[k] = &p.grad;
      }
      n.backward(n.grad, parent_grads);
    }
    if (n.external_grad) *n.external_grad += n.grad;
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id_);
  if (!n.has_grad) return Tensor(value(v.id_).shape());
  return n.grad;
}

// ---------------------------------------------------------------------------
// Ops

namespace {

struct Broadcast {
  std::size_t row_stride;
  std::size_t col_stride;
};

struct BinaryLayout {
  Shape shape;
  std::size_t rows, cols;
  Broadcast a, b;
};

BinaryLayout binary_layout(std::string_view op, const Tensor& a, const Tensor& b) {
  auto fail = [&] {
    return ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                      to_string(b.shape()) + " do not conform");
  };
  if (a.shape() == b.shape()) return {a.shape(), a.rows(), a.cols(), {a.cols(), 1}, {b.cols(), 1}};
  const bool a_full = a.size() >= b.size();
  const Tensor& full = a_full ? a : b;
  const Tensor& other = a_full ? b : a;
  const std::size_t R = full.rows(), C = full.cols();
  Broadcast ob;
  if (other.size() == 1) {
    ob = {0, 0};
  } else if (other.rows() == 1 && other.cols() == C && full.rank() <= 2) {
    ob = {0, 1};
  } else if (other.cols() == 1 && other.rows() == R && full.rank() <= 2) {
    ob = {1, 0};
  } else {
    throw fail();
  }
  Broadcast fb{C, 1};
  return a_full ? BinaryLayout{full.shape(), R, C, fb, ob} : BinaryLayout{full.shape(), R, C, ob, fb};
}

// Elementwise binary op; df returns (d out/d a, d out/d b) at (a, b, out).
template <class F, class DF>
Var binary(std::string_view op, Var a, Var b, F f, DF df) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  BinaryLayout L = binary_layout(op, av, bv);
  Tensor out(L.shape);
  for (std::size_t i = 0; i < L.rows; ++i)
    for (std::size_t j = 0; j < L.cols; ++j)
      out[i * L.cols + j] = f(av[i * L.a.row_stride + j * L.a.col_stride], bv[i * L.b.row_stride + j * L.b.col_stride]);
  Tape& tape = a.tape();
  if (!tape.requires_grad(a) && !tape.requires_grad(b)) return tape.record(op, std::move(out), {a, b}, {});
  Tape* tp = &tape;
  const std::size_t aid = a.id(), bid = b.id(), oid = tape.size();
  auto backward = [tp, aid, bid, oid, L, df](const Tensor& g, std::span<Tensor* const> pg) {
    const Tensor& av = tp->value(aid);
    const Tensor& bv = tp->value(bid);
    const Tensor& ov = tp->value(oid);
    for (std::size_t i = 0; i < L.rows; ++i)
      for (std::size_t j = 0; j < L.cols; ++j) {
        const std::size_t ia = i * L.a.row_stride + j * L.a.col_stride;
        const std::size_t ib = i * L.b.row_stride + j * L.b.col_stride;
        const std::size_t io = i * L.cols + j;
        auto [da, db] = df(av[ia], bv[ib], ov[io]);
        if (pg[0]) (*pg[0])[ia] += g[io] * da;
        if (pg[1]) (*pg[1])[ib] += g[io] * db;
      }
  };
  return tape.record(op, std::move(out), {a, b}, backward);
}

// Elementwise unary op; df returns d out/d x at (x, out).
template <class F, class DF>
Var unary(std::string_view op, Var a, F f, DF df) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  Tape& tape = a.tape();
  if (!tape.requires_grad(a)) return tape.record(op, std::move(out), {a}, {});
  Tape* tp = &tape;
  const std::size_t aid = a.id();
  const std::size_t oid = tape.size();
  auto backward = [tp, aid, oid, df](const Tensor& g, std::span<Tensor* const> pg) {
    const Tensor& x = tp->value(aid);
    const Tensor& y = tp->value(oid);
    Tensor& ga = *pg[0];
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  };
  return tape.record(op, std::move(out), {a}, backward);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_2d(std::string_view op, const Tensor& t) {
  if (t.rank() > 2) throw ShapeError(std::string(op) + " expects a matrix, got " + to_string(t.shape()));
}

}  // namespace

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double x, double y, double) { return std::pair{y, x}; });
}

Var div(Var a, Var b) {
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](double, double y, double o) { return std::pair{1.0 / y, -o / y}; });
}

Var neg(Var a) {
  return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0))
      throw NonFiniteError("log of non-positive value " + std::to_string(v) + " in tensor " +
                           to_string(a.shape()));
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary("softplus", a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var log_gamma(Var a) {
  return unary("log_gamma", a, [](double x) { return log_gamma(x); },
               [](double x, double) { return digamma(x); });
}

Var digamma(Var a) {
  return unary("digamma", a, [](double x) { return digamma(x); },
               [](double x, double) { return trigamma(x); });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_2d("matmul", av);
  require_2d("matmul", bv);
  Tensor out = matmul(av, bv);
  Tape& tape = a.tape();
  Tape* tp = &tape;
  const std::size_t aid = a.id(), bid = b.id();
  auto backward = [tp, aid, bid](const Tensor& g, std::span<Tensor* const> pg) {
    const Tensor& av = tp->value(aid);
    const Tensor& bv = tp->value(bid);
    if (pg[0]) *pg[0] += matmul(g, transpose(bv));
    if (pg[1]) *pg[1] += matmul(transpose(av), g);
  };
  return tape.record("matmul", std::move(out), {a, b}, backward);
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  auto backward = [](const Tensor& g, std::span<Tensor* const> pg) {
    const double gv = g[0];
    for (double& v : pg[0]->data()) v += gv;
  };
  return a.tape().record("sum", Tensor::scalar(s), {a}, backward);
}

Var sum(Var a, int axis) {
  const Tensor& av = a.value();
  require_2d("sum", av);
  const std::size_t R = av.rows(), C = av.cols();
  if (axis == 0) {
    Tensor out({1, C});
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) out[j] += av[i * C + j];
    auto backward = [R, C](const Tensor& g, std::span<Tensor* const> pg) {
      Tensor& ga = *pg[0];
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) ga[i * C + j] += g[j];
    };
    return a.tape().record("sum_cols", std::move(out), {a}, backward);
  }
  if (axis == 1) {
    Tensor out({R, 1});
    for (std::size_t i = 0; i < R; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < C; ++j) s += av[i * C + j];
      out[i] = s;
    }
    auto backward = [R, C](const Tensor& g, std::span<Tensor* const> pg) {
      Tensor& ga = *pg[0];
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) ga[i * C + j] += g[i];
    };
    return a.tape().record("sum_rows", std::move(out), {a}, backward);
  }
  throw std::invalid_argument("sum: axis must be 0 or 1");
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean(Var a, int axis) {
  const double n = static_cast<double>(axis == 0 ? a.value().rows() : a.value().cols());
  return scale(sum(a, axis), 1.0 / n);
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  auto backward = [](const Tensor& g, std::span<Tensor* const> pg) {
    Tensor& ga = *pg[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return a.tape().record("reshape", std::move(out), {a}, backward);
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  for (const Var& p : parts) require_2d("concat", p.value());
  const std::size_t R0 = parts[0].value().rows(), C0 = parts[0].value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if ((axis == 1 && v.rows() != R0) || (axis == 0 && v.cols() != C0))
      throw ShapeError("concat along axis " + std::to_string(axis) + ": shapes " +
                       to_string(parts[0].shape()) + " and " + to_string(v.shape()) + " do not conform");
    total += axis == 1 ? v.cols() : v.rows();
  }
  std::vector<std::size_t> extents;
  Tensor out = axis == 1 ? Tensor({R0, total}) : Tensor({total, C0});
  if (axis == 1) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const Tensor& v = p.value();
      for (std::size_t i = 0; i < R0; ++i)
        std::copy_n(v.data().data() + i * v.cols(), v.cols(), out.data().data() + i * total + off);
      extents.push_back(v.cols());
      off += v.cols();
    }
  } else {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const Tensor& v = p.value();
      std::copy(v.data().begin(), v.data().end(), out.data().begin() + off);
      extents.push_back(v.rows());
      off += v.size();
    }
  }
  auto backward = [axis, extents, R0, C0, total](const Tensor& g, std::span<Tensor* const> pg) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t e = extents[k];
      if (pg[k]) {
        Tensor& gp = *pg[k];
        if (axis == 1) {
          for (std::size_t i = 0; i < R0; ++i)
            for (std::size_t j = 0; j < e; ++j) gp[i * e + j] += g[i * total + off + j];
        } else {
          for (std::size_t i = 0; i < e * C0; ++i) gp[i] += g[off * C0 + i];
        }
      }
      off += e;
    }
  };
  return parts[0].tape().record("concat", std::move(out), parts, backward);
}

Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_2d("slice", av);
  const std::size_t R = av.rows(), C = av.cols();
  const std::size_t extent = axis == 0 ? R : C;
  if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
  if (begin >= end || end > extent)
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     to_string(av.shape()) + " along axis " + std::to_string(axis));
  const std::size_t n = end - begin;
  Tensor out = axis == 1 ? Tensor({R, n}) : Tensor({n, C});
  if (axis == 1) {
    for (std::size_t i = 0; i < R; ++i)
      std::copy_n(av.data().data() + i * C + begin, n, out.data().data() + i * n);
  } else {
    std::copy_n(av.data().data() + begin * C, n * C, out.data().data());
  }
  auto backward = [axis, begin, n, R, C](const Tensor& g, std::span<Tensor* const> pg) {
    Tensor& ga = *pg[0];
    if (axis == 1) {
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * C + begin + j] += g[i * n + j];
    } else {
      for (std::size_t i = 0; i < n * C; ++i) ga[begin * C + i] += g[i];
    }
  };
  return a.tape().record("slice", std::move(out), {a}, backward);
}

Var logsumexp(Var a) {
  const Tensor& av = a.value();
  require_2d("logsumexp", av);
  const std::size_t R = av.rows(), C = av.cols();
  Tensor out({R, 1});
  for (std::size_t i = 0; i < R; ++i) {
    auto row = av.row_span(i);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    out[i] = m + std::log(s);
  }
  Tape* tp = &a.tape();
  const std::size_t aid = a.id(), oid = tp->size();
  auto backward = [tp, aid, oid, R, C](const Tensor& g, std::span<Tensor* const> pg) {
    const Tensor& x = tp->value(aid);
    const Tensor& y = tp->value(oid);
    Tensor& ga = *pg[0];
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) ga[i * C + j] += g[i] * std::exp(x[i * C + j] - y[i]);
  };
  return tp->record("logsumexp", std::move(out), {a}, backward);
}

Var log_softmax(Var a) {
  const Tensor& av = a.value();
  require_2d("log_softmax", av);
  const std::size_t R = av.rows(), C = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < R; ++i) {
    auto row = av.row_span(i);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < C; ++j) out[i * C + j] = row[j] - lse;
  }
  Tape* tp = &a.tape();
  const std::size_t oid = tp->size();
  auto backward = [tp, oid, R, C](const Tensor& g, std::span<Tensor* const> pg) {
    const Tensor& y = tp->value(oid);
    Tensor& ga = *pg[0];
    for (std::size_t i = 0; i < R; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < C; ++j) gs += g[i * C + j];
      for (std::size_t j = 0; j < C; ++j) ga[i * C + j] += g[i * C + j] - std::exp(y[i * C + j]) * gs;
    }
  };
  return tp->record("log_softmax", std::move(out), {a}, backward);
}

Var pick(Var a, std::span<const std::size_t> index) {
  const Tensor& av = a.value();
  require_2d("pick", av);
  const std::size_t R = av.rows(), C = av.cols();
  if (index.size() != R)
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + to_string(av.shape()));
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out({R, 1});
  for (std::size_t i = 0; i < R; ++i) {
    if (idx[i] >= C)
      throw DomainError("pick: index " + std::to_string(idx[i]) + " out of range for " + std::to_string(C) +
                        " columns");
    out[i] = av[i * C + idx[i]];
  }
  auto backward = [idx, C](const Tensor& g, std::span<Tensor* const> pg) {
    Tensor& ga = *pg[0];
    for (std::size_t i = 0; i < idx.size(); ++i) ga[i * C + idx[i]] += g[i];
  };
  return a.tape().record("pick", std::move(out), {a}, backward);
}

}  // namespace nvae
