#include "contextseg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace contextseg {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kNone: return "none";
    case FusionMode::kEarly: return "early";
    case FusionMode::kLate: return "late";
  }
  return "?";
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "none") return FusionMode::kNone;
  if (text == "early") return FusionMode::kEarly;
  if (text == "late") return FusionMode::kLate;
  throw ArgumentError("unknown fusion mode '" + text + "' (none|early|late)");
}

// ---------------------------------------------------------------- NetSpec

NetSpec NetSpec::toy(const std::vector<int>& widths, int kernel) {
  NetSpec spec;
  for (int w : widths) {
    spec.trunk.push_back(LayerSpec::conv(w, kernel, 1, kernel / 2));
    spec.trunk.push_back(LayerSpec::relu());
  }
  return spec;
}

NetSpec NetSpec::toy_default() { return toy({16, 16, 32, 32}); }

void NetSpec::validate() const {
  if (in_channels < 1) throw ArgumentError("net: in_channels must be >= 1");
  if (classes < 1) throw ArgumentError("net: classes must be >= 1");
  if (trunk.empty()) throw ArgumentError("net: trunk is empty");
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    const LayerSpec& l = trunk[i];
    if (l.kind == LayerKind::kConv &&
        (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0))
      throw ArgumentError("net: bad conv geometry at trunk layer " +
                          std::to_string(i));
  }
  for (int t : taps)
    if (t < 0 || t > last_layer())
      throw ArgumentError("net: tap " + std::to_string(t) + " outside trunk");
  if (context_tap < -1 || context_tap > last_layer())
    throw ArgumentError("net: context tap outside trunk");
  if (!tap_scales.empty() && tap_scales.size() != resolved_taps().size())
    throw ArgumentError("net: " + std::to_string(tap_scales.size()) +
                        " tap scales for " + std::to_string(resolved_taps().size()) +
                        " taps");
  for (double s : tap_scales)
    if (!std::isfinite(s)) throw ArgumentError("net: non-finite tap scale");
  if (!std::isfinite(gamma_init)) throw ArgumentError("net: non-finite gamma_init");
}

int NetSpec::layer_channels(int layer) const {
  int c = in_channels;
  for (int i = 0; i <= layer; ++i)
    if (trunk[i].kind == LayerKind::kConv) c = trunk[i].out_channels;
  return c;
}

std::vector<int> NetSpec::block_outputs() const {
  std::vector<int> out;
  for (int i = 0; i <= last_layer(); ++i) {
    const bool next_is_relu =
        i + 1 <= last_layer() && trunk[i + 1].kind == LayerKind::kRelu;
    if (trunk[i].kind == LayerKind::kConv && !next_is_relu) out.push_back(i);
    if (trunk[i].kind == LayerKind::kRelu && i > 0 &&
        trunk[i - 1].kind == LayerKind::kConv)
      out.push_back(i);
  }
  return out;
}

std::vector<int> NetSpec::resolved_taps() const {
  if (head == FusionMode::kNone || taps.empty()) return {last_layer()};
  return taps;
}

int NetSpec::resolved_context_tap() const {
  return context_tap < 0 ? last_layer() : context_tap;
}

// ---------------------------------------------------------------- Network

namespace {

template <typename Dtype>
void xavier_fill(Conv2dLayer<Dtype>& conv, std::mt19937_64& rng) {
  const int k2 = conv.kernel() * conv.kernel();
  const double fan_in = static_cast<double>(conv.in_channels()) * k2;
  const double fan_out = static_cast<double>(conv.out_channels()) * k2;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Dtype& v : conv.weight().value.data()) v = static_cast<Dtype>(dist(rng));
  conv.bias().value.fill(Dtype(0));
}

template <typename Dtype>
void accumulate_grads(std::vector<Param<Dtype>*> params, const LayerGrad<Dtype>& g) {
  for (std::size_t i = 0; i < params.size(); ++i)
    axpy(Dtype(1), g.d_params[i], params[i]->grad);
}

}  // namespace

template <typename Dtype>
Network<Dtype> Network<Dtype>::build(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  std::mt19937_64 rng(seed);

  int channels = spec.in_channels;
  for (std::size_t i = 0; i < spec.trunk.size(); ++i) {
    const LayerSpec& l = spec.trunk[i];
    if (l.kind == LayerKind::kConv) {
      Conv2dLayer<Dtype> conv(channels, l.out_channels, l.kernel, l.stride, l.pad,
                              "trunk." + std::to_string(i));
      xavier_fill(conv, rng);
      net.trunk_.emplace_back(std::move(conv));
      channels = l.out_channels;
    } else {
      net.trunk_.emplace_back(ReluLayer<Dtype>{});
    }
  }

  const bool normalize = spec.head != FusionMode::kNone && spec.fusion_normalize;
  const std::vector<int> taps = spec.resolved_taps();
  for (std::size_t b = 0; b < taps.size(); ++b) {
    Branch br;
    br.tap = taps[b];
    br.channels = spec.layer_channels(taps[b]);
    br.scale = spec.tap_scales.empty() ? Dtype(1)
                                       : static_cast<Dtype>(spec.tap_scales[b]);
    if (normalize)
      br.norm.emplace(br.channels, static_cast<Dtype>(spec.gamma_init),
                      "branch." + std::to_string(b) + ".gamma");
    net.branches_.push_back(std::move(br));
  }
  if (spec.has_context()) {
    Branch br;
    br.tap = spec.resolved_context_tap();
    br.context = true;
    br.channels = spec.layer_channels(br.tap);
    if (normalize)
      br.norm.emplace(br.channels, static_cast<Dtype>(spec.gamma_init),
                      "context.gamma");
    net.branches_.push_back(std::move(br));
  }

  if (spec.head == FusionMode::kLate) {
    for (std::size_t b = 0; b < net.branches_.size(); ++b) {
      Conv2dLayer<Dtype> cls(net.branches_[b].channels, spec.classes, 1, 1, 0,
                             "classifier." + std::to_string(b));
      xavier_fill(cls, rng);
      net.classifiers_.push_back(std::move(cls));
    }
  } else {
    int total = 0;
    for (const Branch& br : net.branches_) total += br.channels;
    Conv2dLayer<Dtype> cls(total, spec.classes, 1, 1, 0, "classifier");
    xavier_fill(cls, rng);
    net.classifiers_.push_back(std::move(cls));
  }
  return net;
}

template <typename Dtype>
Tensor<Dtype> Network<Dtype>::run_trunk(const Tensor<Dtype>& images, int last) {
  if (images.channels() != spec_.in_channels)
    throw ShapeError("network expects " + std::to_string(spec_.in_channels) +
                     " input channels, got " + images.shape().str());
  activations_.assign(last + 1, Tensor<Dtype>());
  const Tensor<Dtype>* x = &images;
  for (int i = 0; i <= last; ++i) {
    activations_[i] = std::visit([&](auto& layer) { return layer.forward(*x); },
                                 trunk_[i]);
    x = &activations_[i];
  }
  return *x;
}

template <typename Dtype>
Tensor<Dtype> Network<Dtype>::forward_to(const Tensor<Dtype>& images, int layer) {
  if (layer < 0 || layer > spec_.last_layer())
    throw ArgumentError("layer index " + std::to_string(layer) + " outside trunk of " +
                        std::to_string(trunk_.size()));
  forward_done_ = false;
  return run_trunk(images, layer);
}

template <typename Dtype>
Tensor<Dtype> Network<Dtype>::forward(const Tensor<Dtype>& images) {
  run_trunk(images, spec_.last_layer());

  std::vector<Tensor<Dtype>> features;
  features.reserve(branches_.size());
  for (Branch& br : branches_) {
    Tensor<Dtype> f = br.context ? br.pool.forward(activations_[br.tap])
                                 : activations_[br.tap];
    if (br.scale != Dtype(1)) scale(br.scale, f);
    if (br.norm) f = br.norm->forward(f);
    features.push_back(std::move(f));
  }

  Tensor<Dtype> logits;
  if (spec_.head == FusionMode::kLate) {
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      Tensor<Dtype> part = classifiers_[b].forward(features[b]);
      if (b == 0)
        logits = std::move(part);
      else
        axpy(Dtype(1), part, logits);
    }
  } else {
    Tensor<Dtype> fused = std::move(features[0]);
    for (std::size_t b = 1; b < features.size(); ++b)
      fused = concat_channels(fused, features[b]);
    logits = classifiers_[0].forward(fused);
  }
  forward_done_ = true;
  return logits;
}

template <typename Dtype>
Tensor<Dtype> Network<Dtype>::backward(const Tensor<Dtype>& d_logits) {
  if (!forward_done_) throw ContractError("network backward without forward");
  forward_done_ = false;

  std::vector<Tensor<Dtype>> d_features(branches_.size());
  if (spec_.head == FusionMode::kLate) {
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      LayerGrad<Dtype> g = classifiers_[b].backward(d_logits);
      accumulate_grads<Dtype>({&classifiers_[b].weight(), &classifiers_[b].bias()}, g);
      d_features[b] = std::move(g.d_input);
    }
  } else {
    LayerGrad<Dtype> g = classifiers_[0].backward(d_logits);
    accumulate_grads<Dtype>({&classifiers_[0].weight(), &classifiers_[0].bias()}, g);
    int offset = 0;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      d_features[b] = branches_.size() == 1
          ? std::move(g.d_input)
          : slice_channels(g.d_input, offset, branches_[b].channels);
      offset += branches_[b].channels;
    }
  }

  // Gradient arriving at each trunk activation from the head.
  std::vector<Tensor<Dtype>> d_act(activations_.size());
  auto add_to = [&](int layer, Tensor<Dtype> d) {
    if (d_act[layer].empty())
      d_act[layer] = std::move(d);
    else
      axpy(Dtype(1), d, d_act[layer]);
  };
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Branch& br = branches_[b];
    Tensor<Dtype> d = std::move(d_features[b]);
    if (br.norm) {
      LayerGrad<Dtype> g = br.norm->backward(d);
      accumulate_grads<Dtype>({&br.norm->gamma()}, g);
      d = std::move(g.d_input);
    }
    if (br.scale != Dtype(1)) scale(br.scale, d);
    if (br.context) d = br.pool.backward(d);
    add_to(br.tap, std::move(d));
  }

  const int last = static_cast<int>(activations_.size()) - 1;
  Tensor<Dtype> d = std::move(d_act[last]);
  for (int i = last; i >= 0; --i) {
    if (d.empty()) d = Tensor<Dtype>(activations_[i].shape());
    if (i < last && !d_act[i].empty()) axpy(Dtype(1), d_act[i], d);
    if (auto* conv = std::get_if<Conv2dLayer<Dtype>>(&trunk_[i])) {
      LayerGrad<Dtype> g = conv->backward(d);
      accumulate_grads<Dtype>({&conv->weight(), &conv->bias()}, g);
      d = std::move(g.d_input);
    } else {
      d = std::get<ReluLayer<Dtype>>(trunk_[i]).backward(d);
    }
  }
  return d;
}

template <typename Dtype>
std::vector<Param<Dtype>*> Network<Dtype>::params() {
  std::vector<Param<Dtype>*> out;
  for (auto& layer : trunk_)
    if (auto* conv = std::get_if<Conv2dLayer<Dtype>>(&layer)) {
      out.push_back(&conv->weight());
      out.push_back(&conv->bias());
    }
  for (Branch& br : branches_)
    if (br.norm) out.push_back(&br.norm->gamma());
  for (auto& cls : classifiers_) {
    out.push_back(&cls.weight());
    out.push_back(&cls.bias());
  }
  return out;
}

template <typename Dtype>
std::vector<const Param<Dtype>*> Network<Dtype>::params() const {
  auto mutable_params = const_cast<Network*>(this)->params();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename Dtype>
std::size_t Network<Dtype>::num_parameters() const {
  std::size_t total = 0;
  for (const Param<Dtype>* p : params()) total += p->value.count();
  return total;
}

template <typename Dtype>
void Network<Dtype>::zero_grad() {
  for (Param<Dtype>* p : params()) p->grad.fill(Dtype(0));
}

template <typename Dtype>
std::vector<std::uint8_t> Network<Dtype>::relu_pattern() const {
  std::vector<std::uint8_t> pattern;
  for (const auto& layer : trunk_)
    if (const auto* relu = std::get_if<ReluLayer<Dtype>>(&layer))
      for (Dtype v : relu->cached_input().data()) pattern.push_back(v > Dtype(0));
  return pattern;
}

template <typename Dtype>
NormScaleLayer<Dtype>* Network<Dtype>::branch_norm(std::size_t b) {
  auto& norm = branches_.at(b).norm;
  return norm ? &*norm : nullptr;
}

template <typename Dtype>
template <typename Other>
Network<Other> Network<Dtype>::cast() const {
  Network<Other> out = Network<Other>::build(spec_, 0);
  auto src = params();
  auto dst = out.params();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i]->value = src[i]->value.template cast<Other>();
    dst[i]->grad = src[i]->grad.template cast<Other>();
  }
  return out;
}

// ---------------------------------------------------------------- grad check

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::string GradCheckReport::str() const {
  std::ostringstream os;
  os << "gradcheck step=" << step << " tol=" << tol << " -> "
     << (pass ? "PASS" : "FAIL") << '\n';
  for (const auto& e : entries)
    os << "  " << e.name << ": max_rel_error=" << e.max_rel_error
       << " plain=" << e.max_plain_rel_error << " checked=" << e.checked << " skipped=" << e.skipped << '\n';
  return os.str();
}

namespace {

std::vector<std::size_t> sample_coords(std::size_t count, std::size_t max_coords,
                                       std::mt19937_64& rng) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_coords == 0 || count <= max_coords) return idx;
  // Partial Fisher-Yates keeps the draw independent of the platform's
  // std::shuffle implementation.
  for (std::size_t i = 0; i < max_coords; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, count - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

template <typename Dtype>
GradCheckReport grad_check(Network<Dtype>& net, const Tensor<Dtype>& images,
                           const LabelMap& labels, const GradCheckOptions& opt) {
  if (!(opt.step > 0)) throw ArgumentError("gradcheck step must be positive");
  GradCheckReport report;
  report.step = opt.step;
  report.tol = opt.tol;

  auto loss_at = [&](const Tensor<Dtype>& x) {
    Tensor<Dtype> logits = net.forward(x);
    const double loss =
        softmax_xent_per_pixel(logits, labels, opt.ignore_label, true).loss;
    if (!std::isfinite(loss))
      throw NumericalError("gradcheck: loss is not finite (" + std::to_string(loss) +
                           ")");
    return loss;
  };

  net.zero_grad();
  Tensor<Dtype> logits = net.forward(images);
  XentResult<Dtype> base = softmax_xent_per_pixel(logits, labels, opt.ignore_label, true);
  if (!std::isfinite(base.loss))
    throw NumericalError("gradcheck: base loss is not finite");
  const std::vector<std::uint8_t> base_pattern = net.relu_pattern();
  const Tensor<Dtype> d_images = net.backward(base.d_logits);

  std::mt19937_64 rng(opt.seed);
  struct Probe {
    double plain = 0;
    double refined = 0;
    bool kink = false;
  };
  auto central = [&](Dtype& value, const Tensor<Dtype>& x, double h, bool& kink) {
    const Dtype saved = value;
    value = static_cast<Dtype>(saved + h);
    const double plus = loss_at(x);
    kink = kink || net.relu_pattern() != base_pattern;
    value = static_cast<Dtype>(saved - h);
    const double minus = loss_at(x);
    kink = kink || net.relu_pattern() != base_pattern;
    value = saved;
    return (plus - minus) / (2 * h);
  };
  auto probe = [&](Dtype& value, const Tensor<Dtype>& x) {
    Probe out;
    out.plain = central(value, x, opt.step, out.kink);
    out.refined = out.plain;
    if (opt.richardson)
      out.refined = (4 * central(value, x, opt.step / 2, out.kink) - out.plain) / 3;
    out.kink = out.kink && opt.skip_kinks;
    return out;
  };
  auto record = [](GradCheckEntry& entry, double analytic, const Probe& pr) {
    if (pr.kink) {
      ++entry.skipped;
      return;
    }
    entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic, pr.refined));
    entry.max_plain_rel_error =
        std::max(entry.max_plain_rel_error, relative_error(analytic, pr.plain));
    ++entry.checked;
  };

  for (Param<Dtype>* p : net.params()) {
    GradCheckEntry entry{p->name};
    const Tensor<Dtype> analytic = p->grad;
    for (std::size_t i : sample_coords(p->value.count(), opt.max_coords_per_tensor, rng))
      record(entry, analytic[i], probe(p->value[i], images));
    report.entries.push_back(entry);
  }
  if (opt.check_input) {
    GradCheckEntry entry{"input"};
    Tensor<Dtype> x = images;
    for (std::size_t i : sample_coords(x.count(), opt.max_coords_per_tensor, rng))
      record(entry, d_images[i], probe(x[i], x));
    report.entries.push_back(entry);
  }

  std::size_t checked = 0;
  for (const auto& e : report.entries) checked += e.checked;
  report.pass = checked > 0 && report.max_rel_error() < opt.tol;
  return report;
}

template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;
template GradCheckReport grad_check(Network<float>&, const Tensor<float>&,
                                    const LabelMap&, const GradCheckOptions&);
template GradCheckReport grad_check(Network<double>&, const Tensor<double>&,
                                    const LabelMap&, const GradCheckOptions&);

}  // namespace contextseg
