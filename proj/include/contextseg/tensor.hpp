#pragma once

#include <algorithm>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "contextseg/error.hpp"

namespace contextseg {

// Extents of a dense (batch, channel, height, width) array.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  // Throws ShapeError unless every extent is positive and the element count
  // fits in size_t.
  void validate() const;
  std::size_t count() const;
  std::size_t spatial() const { return static_cast<std::size_t>(h) * w; }

  bool operator==(const Shape&) const = default;
  std::string str() const;
};

std::ostream& operator<<(std::ostream& os, const Shape& s);

// Row-major (n, c, h, w) buffer. Dtype is float for training and double for
// the finite-difference checkers.
template <typename Dtype>
class Tensor {
 public:
  using value_type = Dtype;

  Tensor() = default;
  explicit Tensor(const Shape& shape, Dtype value = Dtype(0))
      : shape_(checked(shape)), data_(shape_.count(), value) {}
  Tensor(const Shape& shape, std::vector<Dtype> data)
      : shape_(checked(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.count())
      throw ShapeError("buffer of " + std::to_string(data_.size()) +
                       " values for shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  int num() const { return shape_.n; }
  int channels() const { return shape_.c; }
  int height() const { return shape_.h; }
  int width() const { return shape_.w; }
  std::size_t count() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w + w;
  }
  Dtype& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  Dtype at(int n, int c, int h, int w) const {
    return data_[offset(n, c, h, w)];
  }
  Dtype& operator[](std::size_t i) { return data_[i]; }
  Dtype operator[](std::size_t i) const { return data_[i]; }

  std::span<Dtype> data() { return data_; }
  std::span<const Dtype> data() const { return data_; }
  // One (h, w) plane.
  std::span<Dtype> plane(int n, int c) {
    return std::span<Dtype>(data_).subspan(offset(n, c, 0, 0), shape_.spatial());
  }
  std::span<const Dtype> plane(int n, int c) const {
    return std::span<const Dtype>(data_).subspan(offset(n, c, 0, 0),
                                                 shape_.spatial());
  }

  void fill(Dtype value) { std::fill(data_.begin(), data_.end(), value); }
  bool all_finite() const;

  // Elementwise cast, used to move parameter sets between precisions.
  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  static const Shape& checked(const Shape& s) {
    s.validate();
    return s;
  }

  Shape shape_{};
  std::vector<Dtype> data_;
};

// Tensor of the given shape with every element equal to value.
template <typename Dtype>
Tensor<Dtype> new_filled(const Shape& shape, Dtype value);

// Per-pixel channel norm sqrt(sum_c x^2 + eps^2), shape (n, 1, h, w).
template <typename Dtype>
Tensor<Dtype> l2_norm_over_channels(const Tensor<Dtype>& x, double eps = 1e-12);

// Mean over (h, w), shape (n, c, 1, 1).
template <typename Dtype>
Tensor<Dtype> reduce_spatial_mean(const Tensor<Dtype>& x);

// Replicates a 1x1 map to (n, c, h, w).
template <typename Dtype>
Tensor<Dtype> broadcast_spatial(const Tensor<Dtype>& x, int h, int w);

// a's channels followed by b's.
template <typename Dtype>
Tensor<Dtype> concat_channels(const Tensor<Dtype>& a, const Tensor<Dtype>& b);

// Channels [begin, begin + count).
template <typename Dtype>
Tensor<Dtype> slice_channels(const Tensor<Dtype>& x, int begin, int count);

// y += alpha * x, shapes must agree.
template <typename Dtype>
void axpy(Dtype alpha, const Tensor<Dtype>& x, Tensor<Dtype>& y);

template <typename Dtype>
void scale(Dtype alpha, Tensor<Dtype>& x);

// Sum of elements accumulated in double.
template <typename Dtype>
double sum(const Tensor<Dtype>& x);

template <typename Dtype>
double max_abs_diff(const Tensor<Dtype>& a, const Tensor<Dtype>& b);

}  // namespace contextseg
