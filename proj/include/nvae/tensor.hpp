#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace nvae {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Rank 1 tensors behave as a single row (1 x n) wherever an op needs a
/// matrix view; higher ranks fold trailing dimensions into columns.
class Tensor {
 public:
  Tensor() : Tensor(Shape{1}) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(Shape{1}, {value}); }
  static Tensor row(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& vector() const noexcept { return data_; }

  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_.at(r * cols() + c); }
  double& at(std::size_t r, std::size_t c) { return data_.at(r * cols() + c); }

  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }

  /// The single element of a size-1 tensor.
  double item() const;
  bool all_finite() const noexcept;
  Tensor reshaped(Shape shape) const;

  Tensor& operator+=(const Tensor& other);

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Same shape and identical bit patterns (distinguishes -0.0 from 0.0, NaN payloads).
bool bit_equal(const Tensor& a, const Tensor& b) noexcept;
Tensor transpose(const Tensor& m);

/// out(m x n) = a(m x k) * b(k x n), overwriting out.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> out,
          std::size_t m, std::size_t k, std::size_t n);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace nvae
