#pragma once

#include <string>
#include <vector>

#include "contextseg/label_map.hpp"
#include "contextseg/tensor.hpp"

namespace contextseg {

// A learnable tensor and the gradient accumulated into it by backward passes.
template <typename Dtype>
struct Param {
  std::string name;
  Tensor<Dtype> value;
  Tensor<Dtype> grad;

  Param() = default;
  Param(std::string name_, const Shape& shape, Dtype init = Dtype(0))
      : name(std::move(name_)), value(shape, init), grad(shape) {}
};

// Gradients of one backward call. d_params follows the layer's params() order.
template <typename Dtype>
struct LayerGrad {
  Tensor<Dtype> d_input;
  std::vector<Tensor<Dtype>> d_params;
};

/// Per-pixel L2 normalization across channels followed by a learned
/// per-channel scale: y_c = gamma_c * x_c / ||x||, where the norm is taken
/// over the channel vector at each (n, h, w) and floored by eps.
///
/// The backward pass implements
///   dl/dxhat = dl/dy * gamma
///   dl/dx    = (I / r - x x^T / r^3) dl/dxhat          (per pixel)
///   dl/dgamma_c = sum over n, h, w of dl/dy_c * xhat_c
template <typename Dtype>
class NormScaleLayer {
 public:
  NormScaleLayer(int channels, Dtype gamma_init, std::string name = "norm",
                 double eps = 1e-12);

  Tensor<Dtype> forward(const Tensor<Dtype>& x);
  // Consumes the forward caches; a second call without a new forward throws.
  LayerGrad<Dtype> backward(const Tensor<Dtype>& d_y);

  Param<Dtype>& gamma() { return gamma_; }
  const Param<Dtype>& gamma() const { return gamma_; }
  int channels() const { return gamma_.value.channels(); }
  const Tensor<Dtype>& cached_norm() const { return norm_; }
  const Tensor<Dtype>& cached_xhat() const { return xhat_; }

 private:
  Param<Dtype> gamma_;
  double eps_;
  Tensor<Dtype> norm_;
  Tensor<Dtype> xhat_;
  bool cache_valid_ = false;
};

// Output extent of a convolution along one axis; ShapeError if < 1.
int conv_output_extent(int in, int kernel, int stride, int pad);

/// 2-D cross-correlation with bias. Weight is (c_out, c_in, k, k), bias is
/// (1, c_out, 1, 1). Lowered to im2col + GEMM.
template <typename Dtype>
class Conv2dLayer {
 public:
  Conv2dLayer(int in_channels, int out_channels, int kernel, int stride,
              int pad, std::string name = "conv");

  Tensor<Dtype> forward(const Tensor<Dtype>& x);
  LayerGrad<Dtype> backward(const Tensor<Dtype>& d_y);

  Param<Dtype>& weight() { return weight_; }
  Param<Dtype>& bias() { return bias_; }
  const Param<Dtype>& weight() const { return weight_; }
  const Param<Dtype>& bias() const { return bias_; }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }
  Shape output_shape(const Shape& in) const;

 private:
  bool pointwise() const { return kernel_ == 1 && stride_ == 1 && pad_ == 0; }

  int in_channels_, out_channels_, kernel_, stride_, pad_;
  Param<Dtype> weight_;
  Param<Dtype> bias_;
  Shape cached_in_shape_{};
  Tensor<Dtype> cached_input_;
  std::vector<Dtype> cols_;  // im2col of every image in the batch
  bool cache_valid_ = false;
};

template <typename Dtype>
class ReluLayer {
 public:
  Tensor<Dtype> forward(const Tensor<Dtype>& x);
  // Gradient is zero where x <= 0.
  Tensor<Dtype> backward(const Tensor<Dtype>& d_y);
  const Tensor<Dtype>& cached_input() const { return input_; }

 private:
  Tensor<Dtype> input_;
  bool cache_valid_ = false;
};

// Global average pool followed by unpooling (replication) back to the input
// extent. Mean-then-replicate is self-adjoint, so backward applies the same map.
template <typename Dtype>
class GlobalContextLayer {
 public:
  Tensor<Dtype> forward(const Tensor<Dtype>& x);
  Tensor<Dtype> backward(const Tensor<Dtype>& d_y);

 private:
  Shape in_shape_{};
  bool cache_valid_ = false;
};

template <typename Dtype>
struct XentResult {
  double loss = 0;
  Tensor<Dtype> d_logits;
  std::size_t scored = 0;  // non-ignored pixels
};

// Softmax cross-entropy summed over non-ignored pixels. When normalize is set,
// loss and gradient are divided by the scored pixel count.
template <typename Dtype>
XentResult<Dtype> softmax_xent_per_pixel(const Tensor<Dtype>& logits,
                                         const LabelMap& labels,
                                         int ignore_label, bool normalize = true);

}  // namespace contextseg
