#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "contextseg/config.hpp"

namespace contextseg {

struct TrainLogRow {
  int iter = 0;  // updates applied so far, 1-based
  double lr = 0;
  double loss = 0;  // batch loss before this update
  std::optional<double> val_mean_iu;
};

struct TrainOutcome {
  std::optional<Network<float>> final_net;
  std::optional<Network<float>> best_net;
  std::vector<TrainLogRow> log;
  int best_iter = 0;
  double best_val_mean_iu = 0;
  std::optional<double> final_val_mean_iu;
};

// Trains cfg.net from scratch with cfg.train. Batches walk a per-epoch
// shuffle of `train` seeded from train.seed; every eval_interval updates and
// after the last one, `val` is scored. Throws NumericalError naming the
// iteration when the loss goes non-finite. Single-threaded apart from
// validation, whose result does not depend on `threads`.
TrainOutcome train_network(const RunConfig& cfg, const std::vector<Sample>& train,
                           const std::vector<Sample>& val, int threads,
                           const std::function<void(const TrainLogRow&)>& on_row = {});

struct Evaluation {
  std::vector<ConfusionMatrix> per_image;
  std::vector<LabelMap> predictions;  // filled when requested
  ConfusionMatrix total{1};
};

// One forward per sample on a private copy of `net` per worker; matrices are
// merged in sample order.
Evaluation evaluate(const Network<float>& net, const std::vector<Sample>& samples, int threads,
                    bool keep_predictions = false);

}  // namespace contextseg
