#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sspcab {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. Image tensors use the layout
/// (batch, height, width, channels).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  const double& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-4 accessors for (n, h, w, c) tensors.
  std::size_t offset(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
    return ((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
  }
  double& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) noexcept {
    return data_[offset(n, h, w, c)];
  }
  const double& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
    return data_[offset(n, h, w, c)];
  }

  void fill(double value);
  /// Reinterprets the data under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  /// Elementwise `this += scale * other`; shapes must match.
  void add_scaled(const Tensor& other, double scale = 1.0);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Throws ShapeError unless `t` has rank 4.
void require_rank4(const Tensor& t, const char* what);
/// Throws ShapeError naming both shapes unless they are equal.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

/// Folds the sign pattern (v > 0) of every cell into an FNV-1a hash.
std::uint64_t hash_signs(const Tensor& t, std::uint64_t hash = 0xcbf29ce484222325ULL);

}  // namespace sspcab
