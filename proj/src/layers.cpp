#include "contextseg/layers.hpp"

#include <cmath>

#include <Eigen/Core>

namespace contextseg {
namespace {

template <typename Dtype>
using RowMatrix =
    Eigen::Matrix<Dtype, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Dtype>
using MatMap = Eigen::Map<RowMatrix<Dtype>>;
template <typename Dtype>
using ConstMatMap = Eigen::Map<const RowMatrix<Dtype>>;

// Lays out one image as a (c * k * k) x (oh * ow) matrix.
template <typename Dtype>
void im2col(const Dtype* im, int channels, int height, int width, int kernel,
            int stride, int pad, int oh, int ow, Dtype* col) {
  for (int c = 0; c < channels; ++c) {
    const Dtype* plane = im + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) {
            std::fill(col, col + ow, Dtype(0));
            col += ow;
            continue;
          }
          const Dtype* row = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            *col++ = (ix >= 0 && ix < width) ? row[ix] : Dtype(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds the columns back into the image.
template <typename Dtype>
void col2im(const Dtype* col, int channels, int height, int width, int kernel,
            int stride, int pad, int oh, int ow, Dtype* im) {
  for (int c = 0; c < channels; ++c) {
    Dtype* plane = im + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) {
            col += ow;
            continue;
          }
          Dtype* row = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < ow; ++ox, ++col) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) row[ix] += *col;
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- NormScale

template <typename Dtype>
NormScaleLayer<Dtype>::NormScaleLayer(int channels, Dtype gamma_init,
                                      std::string name, double eps)
    : gamma_(std::move(name), Shape{1, channels, 1, 1}, gamma_init), eps_(eps) {}

template <typename Dtype>
Tensor<Dtype> NormScaleLayer<Dtype>::forward(const Tensor<Dtype>& x) {
  const Shape& s = x.shape();
  if (s.c != channels())
    throw ShapeError(gamma_.name + ": input has " + std::to_string(s.c) +
                     " channels, gamma has " + std::to_string(channels()));
  norm_ = l2_norm_over_channels(x, eps_);
  xhat_ = Tensor<Dtype>(s);
  Tensor<Dtype> y(s);
  const std::size_t hw = s.spatial();
  for (int n = 0; n < s.n; ++n) {
    auto r = norm_.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const Dtype g = gamma_.value[c];
      auto xp = x.plane(n, c);
      auto xh = xhat_.plane(n, c);
      auto yp = y.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = xp[i] / r[i];
        yp[i] = g * xh[i];
      }
    }
  }
  cache_valid_ = true;
  return y;
}

template <typename Dtype>
LayerGrad<Dtype> NormScaleLayer<Dtype>::backward(const Tensor<Dtype>& d_y) {
  if (!cache_valid_)
    throw ContractError(gamma_.name + ": backward without a fresh forward");
  const Shape& s = xhat_.shape();
  if (d_y.shape() != s)
    throw ShapeError(gamma_.name + ": d_y " + d_y.shape().str() +
                     " does not match output " + s.str());
  cache_valid_ = false;

  LayerGrad<Dtype> out;
  out.d_input = Tensor<Dtype>(s);
  Tensor<Dtype> d_gamma(gamma_.value.shape());
  const std::size_t hw = s.spatial();
  std::vector<double> dot(hw);
  std::vector<double> dg(s.c, 0.0);
  for (int n = 0; n < s.n; ++n) {
    // dot_i = <xhat, dl/dxhat> at pixel i
    std::fill(dot.begin(), dot.end(), 0.0);
    for (int c = 0; c < s.c; ++c) {
      const double g = gamma_.value[c];
      auto dy = d_y.plane(n, c);
      auto xh = xhat_.plane(n, c);
      double acc = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        dot[i] += double(xh[i]) * (g * dy[i]);
        acc += double(dy[i]) * xh[i];
      }
      dg[c] += acc;
    }
    auto r = norm_.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const double g = gamma_.value[c];
      auto dy = d_y.plane(n, c);
      auto xh = xhat_.plane(n, c);
      auto dx = out.d_input.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i)
        dx[i] = static_cast<Dtype>((g * dy[i] - xh[i] * dot[i]) / r[i]);
    }
  }
  for (int c = 0; c < s.c; ++c) d_gamma[c] = static_cast<Dtype>(dg[c]);
  out.d_params.push_back(std::move(d_gamma));
  return out;
}

// ---------------------------------------------------------------- Conv2d

int conv_output_extent(int in, int kernel, int stride, int pad) {
  if (kernel < 1 || stride < 1 || pad < 0)
    throw ShapeError("bad convolution geometry k=" + std::to_string(kernel) +
                     " s=" + std::to_string(stride) + " p=" + std::to_string(pad));
  const int span = in + 2 * pad - kernel;
  if (span < 0)
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  return span / stride + 1;
}

template <typename Dtype>
Conv2dLayer<Dtype>::Conv2dLayer(int in_channels, int out_channels, int kernel,
                                int stride, int pad, std::string name)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel),
      stride_(stride), pad_(pad),
      weight_(name + ".weight", Shape{out_channels, in_channels, kernel, kernel}),
      bias_(name + ".bias", Shape{1, out_channels, 1, 1}) {
  if (stride < 1 || pad < 0)
    throw ShapeError(name + ": stride must be >= 1 and pad >= 0");
}

template <typename Dtype>
Shape Conv2dLayer<Dtype>::output_shape(const Shape& in) const {
  if (in.c != in_channels_)
    throw ShapeError(weight_.name + ": input has " + std::to_string(in.c) +
                     " channels, expected " + std::to_string(in_channels_));
  return Shape{in.n, out_channels_, conv_output_extent(in.h, kernel_, stride_, pad_),
               conv_output_extent(in.w, kernel_, stride_, pad_)};
}

template <typename Dtype>
Tensor<Dtype> Conv2dLayer<Dtype>::forward(const Tensor<Dtype>& x) {
  const Shape in = x.shape();
  const Shape os = output_shape(in);
  const int K = in_channels_ * kernel_ * kernel_;
  const int P = os.h * os.w;
  Tensor<Dtype> y(os);

  cached_in_shape_ = in;
  if (pointwise()) {
    cached_input_ = x;
  } else {
    cols_.resize(static_cast<std::size_t>(in.n) * K * P);
  }
  ConstMatMap<Dtype> W(weight_.value.data().data(), out_channels_, K);
  for (int n = 0; n < in.n; ++n) {
    const Dtype* col;
    if (pointwise()) {
      col = x.data().data() + x.offset(n, 0, 0, 0);
    } else {
      Dtype* dst = cols_.data() + static_cast<std::size_t>(n) * K * P;
      im2col(x.data().data() + x.offset(n, 0, 0, 0), in.c, in.h, in.w, kernel_,
             stride_, pad_, os.h, os.w, dst);
      col = dst;
    }
    MatMap<Dtype> out(y.data().data() + y.offset(n, 0, 0, 0), out_channels_, P);
    out.noalias() = W * ConstMatMap<Dtype>(col, K, P);
    for (int c = 0; c < out_channels_; ++c)
      out.row(c).array() += bias_.value[c];
  }
  cache_valid_ = true;
  return y;
}

template <typename Dtype>
LayerGrad<Dtype> Conv2dLayer<Dtype>::backward(const Tensor<Dtype>& d_y) {
  if (!cache_valid_)
    throw ContractError(weight_.name + ": backward without a fresh forward");
  const Shape in = cached_in_shape_;
  const Shape os = output_shape(in);
  if (d_y.shape() != os)
    throw ShapeError(weight_.name + ": d_y " + d_y.shape().str() +
                     " does not match output " + os.str());
  cache_valid_ = false;

  const int K = in_channels_ * kernel_ * kernel_;
  const int P = os.h * os.w;
  LayerGrad<Dtype> out;
  out.d_input = Tensor<Dtype>(in);
  Tensor<Dtype> d_weight(weight_.value.shape());
  Tensor<Dtype> d_bias(bias_.value.shape());

  ConstMatMap<Dtype> W(weight_.value.data().data(), out_channels_, K);
  MatMap<Dtype> dW(d_weight.data().data(), out_channels_, K);
  std::vector<double> db(out_channels_, 0.0);
  std::vector<Dtype> dcol(pointwise() ? 0 : static_cast<std::size_t>(K) * P);
  for (int n = 0; n < in.n; ++n) {
    ConstMatMap<Dtype> dy(d_y.data().data() + d_y.offset(n, 0, 0, 0),
                          out_channels_, P);
    const Dtype* col = pointwise()
        ? cached_input_.data().data() + cached_input_.offset(n, 0, 0, 0)
        : cols_.data() + static_cast<std::size_t>(n) * K * P;
    dW.noalias() += dy * ConstMatMap<Dtype>(col, K, P).transpose();
    for (int c = 0; c < out_channels_; ++c)
      for (int i = 0; i < P; ++i) db[c] += dy(c, i);

    Dtype* dx = out.d_input.data().data() + out.d_input.offset(n, 0, 0, 0);
    if (pointwise()) {
      MatMap<Dtype>(dx, K, P).noalias() = W.transpose() * dy;
    } else {
      MatMap<Dtype>(dcol.data(), K, P).noalias() = W.transpose() * dy;
      col2im(dcol.data(), in.c, in.h, in.w, kernel_, stride_, pad_, os.h, os.w, dx);
    }
  }
  for (int c = 0; c < out_channels_; ++c) d_bias[c] = static_cast<Dtype>(db[c]);
  out.d_params.push_back(std::move(d_weight));
  out.d_params.push_back(std::move(d_bias));
  return out;
}

// ---------------------------------------------------------------- ReLU

template <typename Dtype>
Tensor<Dtype> ReluLayer<Dtype>::forward(const Tensor<Dtype>& x) {
  input_ = x;
  Tensor<Dtype> y = x;
  for (Dtype& v : y.data()) v = v > Dtype(0) ? v : Dtype(0);
  cache_valid_ = true;
  return y;
}

template <typename Dtype>
Tensor<Dtype> ReluLayer<Dtype>::backward(const Tensor<Dtype>& d_y) {
  if (!cache_valid_) throw ContractError("relu: backward without a fresh forward");
  if (d_y.shape() != input_.shape())
    throw ShapeError("relu: d_y " + d_y.shape().str() + " vs input " +
                     input_.shape().str());
  cache_valid_ = false;
  Tensor<Dtype> dx(d_y.shape());
  for (std::size_t i = 0; i < dx.count(); ++i)
    dx[i] = input_[i] > Dtype(0) ? d_y[i] : Dtype(0);
  return dx;
}

// ---------------------------------------------------------------- context

template <typename Dtype>
Tensor<Dtype> GlobalContextLayer<Dtype>::forward(const Tensor<Dtype>& x) {
  in_shape_ = x.shape();
  cache_valid_ = true;
  return broadcast_spatial(reduce_spatial_mean(x), in_shape_.h, in_shape_.w);
}

template <typename Dtype>
Tensor<Dtype> GlobalContextLayer<Dtype>::backward(const Tensor<Dtype>& d_y) {
  if (!cache_valid_)
    throw ContractError("global context: backward without a fresh forward");
  if (d_y.shape() != in_shape_)
    throw ShapeError("global context: d_y " + d_y.shape().str() + " vs " +
                     in_shape_.str());
  cache_valid_ = false;
  return broadcast_spatial(reduce_spatial_mean(d_y), in_shape_.h, in_shape_.w);
}

// ---------------------------------------------------------------- loss

template <typename Dtype>
XentResult<Dtype> softmax_xent_per_pixel(const Tensor<Dtype>& logits,
                                         const LabelMap& labels,
                                         int ignore_label, bool normalize) {
  const Shape& s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w)
    throw ShapeError("labels (" + std::to_string(labels.n) + "," +
                     std::to_string(labels.h) + "," + std::to_string(labels.w) +
                     ") do not match logits " + s.str());
  XentResult<Dtype> res;
  res.d_logits = Tensor<Dtype>(s);
  std::vector<double> prob(s.c);
  double loss = 0;
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const int label = labels.at(n, y, x);
        if (label == ignore_label) continue;
        if (label < 0 || label >= s.c)
          throw DataError("label " + std::to_string(label) + " outside [0, " +
                          std::to_string(s.c) + ")");
        double mx = logits.at(n, 0, y, x);
        for (int c = 1; c < s.c; ++c) mx = std::max(mx, double(logits.at(n, c, y, x)));
        double z = 0;
        for (int c = 0; c < s.c; ++c) {
          prob[c] = std::exp(double(logits.at(n, c, y, x)) - mx);
          z += prob[c];
        }
        for (int c = 0; c < s.c; ++c) prob[c] /= z;
        loss -= std::log(std::max(prob[label], 1e-300));
        for (int c = 0; c < s.c; ++c)
          res.d_logits.at(n, c, y, x) =
              static_cast<Dtype>(prob[c] - (c == label ? 1.0 : 0.0));
        ++res.scored;
      }
  if (normalize && res.scored > 0) {
    const double inv = 1.0 / static_cast<double>(res.scored);
    loss *= inv;
    scale(static_cast<Dtype>(inv), res.d_logits);
  }
  res.loss = loss;
  return res;
}

template class NormScaleLayer<float>;
template class NormScaleLayer<double>;
template class Conv2dLayer<float>;
template class Conv2dLayer<double>;
template class ReluLayer<float>;
template class ReluLayer<double>;
template class GlobalContextLayer<float>;
template class GlobalContextLayer<double>;
template XentResult<float> softmax_xent_per_pixel(const Tensor<float>&,
                                                  const LabelMap&, int, bool);
template XentResult<double> softmax_xent_per_pixel(const Tensor<double>&,
                                                   const LabelMap&, int, bool);

}  // namespace contextseg
