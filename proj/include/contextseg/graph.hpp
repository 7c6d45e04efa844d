#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "contextseg/layers.hpp"

namespace contextseg {

enum class LayerKind { kConv, kRelu };

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  int out_channels = 0;  // conv only
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  static LayerSpec conv(int out_channels, int kernel, int stride = 1, int pad = 0) {
    return {LayerKind::kConv, out_channels, kernel, stride, pad};
  }
  static LayerSpec relu() { return {LayerKind::kRelu, 0, 1, 1, 0}; }
  bool operator==(const LayerSpec&) const = default;
};

// None: one classifier on the last trunk map. Early: branches are concatenated
// and share one classifier. Late: one classifier per branch, logits summed.
enum class FusionMode { kNone, kEarly, kLate };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

struct NetSpec {
  int in_channels = 3;
  std::vector<LayerSpec> trunk;
  FusionMode head = FusionMode::kEarly;
  int classes = 5;
  bool fusion_normalize = true;
  bool context_enabled = true;
  // Trunk layer indices that feed local branches; empty means the last layer.
  std::vector<int> taps;
  // Trunk layer index pooled for the context branch; -1 means the last layer.
  int context_tap = -1;
  // Fixed multiplier applied to each local branch before normalization.
  // Empty means 1 for every tap.
  std::vector<double> tap_scales;
  double gamma_init = 10.0;

  // conv(k, pad k/2) + relu per width, stride 1.
  static NetSpec toy(const std::vector<int>& widths, int kernel = 3);
  // Widths (16, 16, 32, 32), 5 classes, early fusion with normalization.
  static NetSpec toy_default();

  // Throws ArgumentError on an inconsistent spec.
  void validate() const;
  int layer_channels(int layer) const;
  int last_layer() const { return static_cast<int>(trunk.size()) - 1; }
  // Index of the last layer of each conv(+relu) block.
  std::vector<int> block_outputs() const;
  std::vector<int> resolved_taps() const;
  int resolved_context_tap() const;
  bool has_context() const { return head != FusionMode::kNone && context_enabled; }
  bool operator==(const NetSpec&) const = default;
};

template <typename Dtype>
using TrunkLayer = std::variant<Conv2dLayer<Dtype>, ReluLayer<Dtype>>;

/// Trunk plus fusion head. Copies are independent networks (parameters,
/// gradients and caches are all values), which is how evaluation threads get
/// private instances.
template <typename Dtype>
class Network {
 public:
  // Xavier-uniform conv weights, zero biases, gamma = spec.gamma_init.
  static Network build(const NetSpec& spec, std::uint64_t seed);

  const NetSpec& spec() const { return spec_; }

  // Logits (n, classes, h', w').
  Tensor<Dtype> forward(const Tensor<Dtype>& images);
  // Activations of trunk layer `layer` only; no head evaluation.
  Tensor<Dtype> forward_to(const Tensor<Dtype>& images, int layer);
  // Accumulates parameter gradients; returns d_images.
  Tensor<Dtype> backward(const Tensor<Dtype>& d_logits);

  std::vector<Param<Dtype>*> params();
  std::vector<const Param<Dtype>*> params() const;
  std::size_t num_parameters() const;
  void zero_grad();

  // Sign pattern of every ReLU input from the last forward; used to detect
  // finite-difference probes that cross a kink.
  std::vector<std::uint8_t> relu_pattern() const;

  // Same architecture with parameters converted to Other.
  template <typename Other>
  Network<Other> cast() const;

  // Branch-level access for tests: norm layers are present only when the
  // spec normalizes.
  std::size_t num_branches() const { return branches_.size(); }
  NormScaleLayer<Dtype>* branch_norm(std::size_t b);
  Conv2dLayer<Dtype>& classifier(std::size_t i) { return classifiers_.at(i); }
  std::size_t num_classifiers() const { return classifiers_.size(); }
  TrunkLayer<Dtype>& trunk_layer(std::size_t i) { return trunk_.at(i); }

 private:
  template <typename Other>
  friend class Network;

  struct Branch {
    int tap = 0;
    bool context = false;
    Dtype scale = Dtype(1);
    GlobalContextLayer<Dtype> pool;
    std::optional<NormScaleLayer<Dtype>> norm;
    int channels = 0;
  };

  Network() = default;
  Tensor<Dtype> run_trunk(const Tensor<Dtype>& images, int last);

  NetSpec spec_;
  std::vector<TrunkLayer<Dtype>> trunk_;
  std::vector<Branch> branches_;
  std::vector<Conv2dLayer<Dtype>> classifiers_;
  std::vector<Tensor<Dtype>> activations_;
  bool forward_done_ = false;
};

struct GradCheckOptions {
  double step = 1e-3;
  double tol = 1e-3;
  int ignore_label = 255;
  // Coordinates sampled per tensor; tensors this small or smaller are checked
  // exhaustively. 0 checks everything.
  std::size_t max_coords_per_tensor = 200;
  std::uint64_t seed = 0;
  // Skip coordinates whose +/- probes change any ReLU sign.
  bool skip_kinks = true;
  bool check_input = true;
  // Combine the +/- step and +/- step/2 differences, (4 D(h/2) - D(h)) / 3,
  // cancelling the h^2 truncation term. The plain D(step) error is still
  // reported alongside.
  bool richardson = true;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0;
  // Same comparison against the plain central difference at `step`.
  double max_plain_rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double step = 0;
  double tol = 0;
  bool pass = false;

  double max_rel_error() const;
  std::string str() const;
};

// |a - f| / max(|a|, |f|, 1e-8)
double relative_error(double analytic, double numeric);

/// Central differences of the normalized softmax loss against backward(),
/// per parameter tensor and for the input. Throws NumericalError when the
/// loss is not finite.
template <typename Dtype>
GradCheckReport grad_check(Network<Dtype>& net, const Tensor<Dtype>& images,
                           const LabelMap& labels, const GradCheckOptions& opt);

}  // namespace contextseg
