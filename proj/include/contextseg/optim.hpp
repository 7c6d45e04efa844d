#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "contextseg/layers.hpp"

namespace contextseg {

enum class LrPolicy { kStep, kPoly };

std::string to_string(LrPolicy policy);
LrPolicy parse_lr_policy(const std::string& text);

struct TrainConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  LrPolicy policy = LrPolicy::kPoly;
  double power = 0.9;
  int max_iter = 2000;
  int step_size = 0;  // 0 means max_iter / 3
  double step_gamma = 0.1;
  int accum_steps = 1;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;

  void validate() const;
  int effective_step_size() const;
  bool operator==(const TrainConfig&) const = default;
};

// poly: base_lr * (1 - iter / max_iter)^power
// step: base_lr * step_gamma^floor(iter / step_size)
double lr_at(const TrainConfig& cfg, int iter);

/// Heavy-ball SGD: v <- momentum * v + lr * (g + weight_decay * p); p <- p - v.
/// One momentum buffer per parameter, created on first use.
template <typename Dtype>
class SgdSolver {
 public:
  explicit SgdSolver(TrainConfig cfg);

  // Applies one update using each param's grad and advances the iteration.
  // Throws NumericalError naming the first parameter with a non-finite grad.
  void step(std::span<Param<Dtype>* const> params);

  int iteration() const { return iter_; }
  double current_lr() const { return lr_at(cfg_, iter_); }
  const std::vector<Tensor<Dtype>>& momentum_buffers() const { return history_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  int iter_ = 0;
  std::vector<Tensor<Dtype>> history_;
};

/// Averages parameter gradients over accum_steps micro-batches.
template <typename Dtype>
class GradAccumulator {
 public:
  explicit GradAccumulator(int accum_steps);

  // Adds one micro-batch worth of gradients.
  void add(std::span<const Tensor<Dtype>> grads);
  void add(std::span<Param<Dtype>* const> params);
  bool ready() const { return contributions_ == accum_steps_; }
  int contributions() const { return contributions_; }

  // Mean of the contributions. ContractError unless exactly accum_steps were
  // added. Resets the sink.
  std::vector<Tensor<Dtype>> take_mean();
  // Writes the mean into each param's grad.
  void take_mean_into(std::span<Param<Dtype>* const> params);

 private:
  int accum_steps_;
  int contributions_ = 0;
  std::vector<Tensor<double>> sink_;
};

}  // namespace contextseg
