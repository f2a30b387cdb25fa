#include "nvae/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "nvae/error.hpp"

namespace nvae {

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor shape " + to_string(shape) + " has a zero dimension");
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size())
    throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                     " elements, got " + std::to_string(data_.size()));
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const noexcept { return shape_.size() == 1 ? 1 : shape_[0]; }

std::size_t Tensor::cols() const noexcept {
  return shape_.size() == 1 ? shape_[0] : data_.size() / shape_[0];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.size() != size())
    throw ShapeError("accumulate " + to_string(other.shape()) + " into " + to_string(shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

bool bit_equal(const Tensor& a, const Tensor& b) noexcept {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

Tensor transpose(const Tensor& m) {
  const std::size_t r = m.rows(), c = m.cols();
  Tensor t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = m[i * c + j];
  return t;
}

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> out,
          std::size_t m, std::size_t k, std::size_t n) {
  std::fill(out.begin(), out.end(), 0.0);
  // Blocked over k and n so a panel of b stays in cache while all rows of a stream past it.
  constexpr std::size_t kBlock = 64;
  constexpr std::size_t nBlock = 256;
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
  for (std::size_t k0 = 0; k0 < k; k0 += kBlock) {
    const std::size_t k1 = std::min(k, k0 + kBlock);
    for (std::size_t j0 = 0; j0 < n; j0 += nBlock) {
      const std::size_t j1 = std::min(n, j0 + nBlock);
      for (std::size_t i = 0; i < m; ++i) {
        double* crow = pc + i * n;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const double aik = pa[i * k + kk];
          const double* brow = pb + kk * n;
          for (std::size_t j = j0; j < j1; ++j) crow[j] += aik * brow[j];
        }
      }
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " * " +
                     to_string(b.shape()));
  Tensor out({a.rows(), b.cols()});
  gemm(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

}  // namespace nvae
