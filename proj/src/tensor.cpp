#include "contextseg/tensor.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace contextseg {

void Shape::validate() const {
  if (n < 1 || c < 1 || h < 1 || w < 1)
    throw ShapeError("non-positive extent in " + str());
  std::size_t total = 1;
  for (int e : {n, c, h, w}) {
    const auto extent = static_cast<std::size_t>(e);
    if (total > std::numeric_limits<std::size_t>::max() / extent)
      throw ShapeError("element count overflows for " + str());
    total *= extent;
  }
}

std::size_t Shape::count() const {
  return static_cast<std::size_t>(n) * c * h * w;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << *this;
  return os.str();
}

std::ostream& operator<<(std::ostream& os, const Shape& s) {
  return os << '(' << s.n << ',' << s.c << ',' << s.h << ',' << s.w << ')';
}

template <typename Dtype>
bool Tensor<Dtype>::all_finite() const {
  for (Dtype v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename Dtype>
Tensor<Dtype> new_filled(const Shape& shape, Dtype value) {
  return Tensor<Dtype>(shape, value);
}

template <typename Dtype>
Tensor<Dtype> l2_norm_over_channels(const Tensor<Dtype>& x, double eps) {
  if (!(eps > 0)) throw ArgumentError("norm eps must be positive");
  const Shape& s = x.shape();
  Tensor<Dtype> out(Shape{s.n, 1, s.h, s.w});
  const std::size_t hw = s.spatial();
  std::vector<double> acc(hw);
  for (int n = 0; n < s.n; ++n) {
    std::fill(acc.begin(), acc.end(), eps * eps);
    for (int c = 0; c < s.c; ++c) {
      auto p = x.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) acc[i] += double(p[i]) * p[i];
    }
    auto o = out.plane(n, 0);
    for (std::size_t i = 0; i < hw; ++i) o[i] = static_cast<Dtype>(std::sqrt(acc[i]));
  }
  return out;
}

template <typename Dtype>
Tensor<Dtype> reduce_spatial_mean(const Tensor<Dtype>& x) {
  const Shape& s = x.shape();
  Tensor<Dtype> out(Shape{s.n, s.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.spatial());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double acc = 0;
      for (Dtype v : x.plane(n, c)) acc += v;
      out.at(n, c, 0, 0) = static_cast<Dtype>(acc * inv);
    }
  return out;
}

template <typename Dtype>
Tensor<Dtype> broadcast_spatial(const Tensor<Dtype>& x, int h, int w) {
  const Shape& s = x.shape();
  if (s.h != 1 || s.w != 1)
    throw ShapeError("broadcast_spatial needs a 1x1 map, got " + s.str());
  Tensor<Dtype> out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      auto p = out.plane(n, c);
      std::fill(p.begin(), p.end(), x.at(n, c, 0, 0));
    }
  return out;
}

template <typename Dtype>
Tensor<Dtype> concat_channels(const Tensor<Dtype>& a, const Tensor<Dtype>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels " + sa.str() + " with " + sb.str());
  Tensor<Dtype> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t block_a = sa.c * sa.spatial();
  const std::size_t block_b = sb.c * sb.spatial();
  auto dst = out.data().begin();
  for (int n = 0; n < sa.n; ++n) {
    auto src_a = a.data().subspan(n * block_a, block_a);
    auto src_b = b.data().subspan(n * block_b, block_b);
    dst = std::copy(src_a.begin(), src_a.end(), dst);
    dst = std::copy(src_b.begin(), src_b.end(), dst);
  }
  return out;
}

template <typename Dtype>
Tensor<Dtype> slice_channels(const Tensor<Dtype>& x, int begin, int count) {
  const Shape& s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c)
    throw ShapeError("channel slice [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") of " + s.str());
  Tensor<Dtype> out(Shape{s.n, count, s.h, s.w});
  const std::size_t block = count * s.spatial();
  for (int n = 0; n < s.n; ++n) {
    auto src = x.data().subspan(x.offset(n, begin, 0, 0), block);
    std::copy(src.begin(), src.end(), out.data().begin() + n * block);
  }
  return out;
}

template <typename Dtype>
void axpy(Dtype alpha, const Tensor<Dtype>& x, Tensor<Dtype>& y) {
  if (x.shape() != y.shape())
    throw ShapeError("axpy " + x.shape().str() + " into " + y.shape().str());
  auto xs = x.data();
  auto ys = y.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] += alpha * xs[i];
}

template <typename Dtype>
void scale(Dtype alpha, Tensor<Dtype>& x) {
  for (Dtype& v : x.data()) v *= alpha;
}

template <typename Dtype>
double sum(const Tensor<Dtype>& x) {
  double acc = 0;
  for (Dtype v : x.data()) acc += v;
  return acc;
}

template <typename Dtype>
double max_abs_diff(const Tensor<Dtype>& a, const Tensor<Dtype>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff " + a.shape().str() + " vs " + b.shape().str());
  double m = 0;
  for (std::size_t i = 0; i < a.count(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

#define CONTEXTSEG_INSTANTIATE_TENSOR(T)                                      \
  template class Tensor<T>;                                                   \
  template Tensor<T> new_filled(const Shape&, T);                             \
  template Tensor<T> l2_norm_over_channels(const Tensor<T>&, double);         \
  template Tensor<T> reduce_spatial_mean(const Tensor<T>&);                   \
  template Tensor<T> broadcast_spatial(const Tensor<T>&, int, int);           \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> slice_channels(const Tensor<T>&, int, int);              \
  template void axpy(T, const Tensor<T>&, Tensor<T>&);                        \
  template void scale(T, Tensor<T>&);                                         \
  template double sum(const Tensor<T>&);                                      \
  template double max_abs_diff(const Tensor<T>&, const Tensor<T>&);

CONTEXTSEG_INSTANTIATE_TENSOR(float)
CONTEXTSEG_INSTANTIATE_TENSOR(double)

}  // namespace contextseg
