#include "contextseg/optim.hpp"

#include <cmath>

namespace contextseg {

std::string to_string(LrPolicy policy) {
  return policy == LrPolicy::kPoly ? "poly" : "step";
}

LrPolicy parse_lr_policy(const std::string& text) {
  if (text == "poly") return LrPolicy::kPoly;
  if (text == "step") return LrPolicy::kStep;
  throw ArgumentError("unknown lr policy '" + text + "' (poly|step)");
}

void TrainConfig::validate() const {
  if (!(base_lr >= 0)) throw ArgumentError("train: base_lr must be >= 0");
  if (!(momentum >= 0 && momentum < 1))
    throw ArgumentError("train: momentum must be in [0, 1)");
  if (policy == LrPolicy::kPoly && !(power > 0))
    throw ArgumentError("train: poly policy needs power > 0");
  if (max_iter < 1) throw ArgumentError("train: max_iter must be positive");
  if (step_size < 0) throw ArgumentError("train: step_size must be >= 0");
  if (!(step_gamma >= 0)) throw ArgumentError("train: step_gamma must be >= 0");
  if (accum_steps < 1) throw ArgumentError("train: accum_steps must be positive");
  if (!(weight_decay >= 0)) throw ArgumentError("train: weight_decay must be >= 0");
}

int TrainConfig::effective_step_size() const {
  if (step_size > 0) return step_size;
  return std::max(1, max_iter / 3);
}

double lr_at(const TrainConfig& cfg, int iter) {
  if (iter < 0 || iter > cfg.max_iter)
    throw ArgumentError("iteration " + std::to_string(iter) + " outside [0, " +
                        std::to_string(cfg.max_iter) + "]");
  if (cfg.policy == LrPolicy::kPoly) {
    const double frac = 1.0 - static_cast<double>(iter) / cfg.max_iter;
    return cfg.base_lr * std::pow(frac, cfg.power);
  }
  return cfg.base_lr * std::pow(cfg.step_gamma, iter / cfg.effective_step_size());
}

// ---------------------------------------------------------------- SGD

template <typename Dtype>
SgdSolver<Dtype>::SgdSolver(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
}

template <typename Dtype>
void SgdSolver<Dtype>::step(std::span<Param<Dtype>* const> params) {
  for (const Param<Dtype>* p : params)
    if (!p->grad.all_finite())
      throw NumericalError("non-finite gradient in " + p->name + " at iteration " +
                           std::to_string(iter_));
  if (history_.empty())
    for (const Param<Dtype>* p : params) history_.emplace_back(p->value.shape());
  if (history_.size() != params.size())
    throw ContractError("solver was stepped with a different parameter set");

  const double lr = lr_at(cfg_, std::min(iter_, cfg_.max_iter));
  const double m = cfg_.momentum;
  const double wd = cfg_.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k]->value.data();
    auto grad = params[k]->grad.data();
    auto v = history_[k].data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double vi = m * v[i] + lr * (double(grad[i]) + wd * value[i]);
      v[i] = static_cast<Dtype>(vi);
      value[i] = static_cast<Dtype>(value[i] - vi);
    }
  }
  ++iter_;
}

// ---------------------------------------------------------------- accumulation

template <typename Dtype>
GradAccumulator<Dtype>::GradAccumulator(int accum_steps) : accum_steps_(accum_steps) {
  if (accum_steps < 1) throw ArgumentError("accum_steps must be positive");
}

template <typename Dtype>
void GradAccumulator<Dtype>::add(std::span<const Tensor<Dtype>> grads) {
  if (contributions_ >= accum_steps_)
    throw ContractError("more than " + std::to_string(accum_steps_) +
                        " contributions before a step");
  if (sink_.empty())
    for (const auto& g : grads) sink_.emplace_back(g.shape());
  if (sink_.size() != grads.size())
    throw ContractError("gradient set changed between micro-batches");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].shape() != sink_[k].shape())
      throw ShapeError("accumulated gradient " + std::to_string(k) + " changed shape");
    auto dst = sink_[k].data();
    auto src = grads[k].data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  ++contributions_;
}

template <typename Dtype>
void GradAccumulator<Dtype>::add(std::span<Param<Dtype>* const> params) {
  std::vector<Tensor<Dtype>> grads;
  grads.reserve(params.size());
  for (const Param<Dtype>* p : params) grads.push_back(p->grad);
  add(std::span<const Tensor<Dtype>>(grads));
}

template <typename Dtype>
std::vector<Tensor<Dtype>> GradAccumulator<Dtype>::take_mean() {
  if (contributions_ != accum_steps_)
    throw ContractError("step after " + std::to_string(contributions_) + " of " +
                        std::to_string(accum_steps_) + " accumulation steps");
  std::vector<Tensor<Dtype>> out;
  out.reserve(sink_.size());
  const double inv = 1.0 / accum_steps_;
  for (const auto& s : sink_) {
    Tensor<Dtype> t(s.shape());
    for (std::size_t i = 0; i < t.count(); ++i) t[i] = static_cast<Dtype>(s[i] * inv);
    out.push_back(std::move(t));
  }
  sink_.clear();
  contributions_ = 0;
  return out;
}

template <typename Dtype>
void GradAccumulator<Dtype>::take_mean_into(std::span<Param<Dtype>* const> params) {
  std::vector<Tensor<Dtype>> mean = take_mean();
  if (mean.size() != params.size())
    throw ContractError("parameter set changed between micro-batches");
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = std::move(mean[k]);
}

template class SgdSolver<float>;
template class SgdSolver<double>;
template class GradAccumulator<float>;
template class GradAccumulator<double>;

}  // namespace contextseg
