#include "contextseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "contextseg/parallel.hpp"

namespace contextseg {

Evaluation evaluate(const Network<float>& net, const std::vector<Sample>& samples, int threads,
                    bool keep_predictions) {
  const int classes = net.spec().classes;
  Evaluation ev;
  ev.total = ConfusionMatrix(classes);
  ev.per_image.assign(samples.size(), ConfusionMatrix(classes));
  if (keep_predictions) ev.predictions.resize(samples.size());

  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(samples.size())));
  std::vector<Network<float>> copies(static_cast<std::size_t>(workers), net);
  parallel_for(samples.size(), workers, [&](int w, std::size_t i) {
    const Sample& s = samples[i];
    LabelMap pred = argmax_labels(copies[w].forward(image_to_tensor(s.image)));
    accumulate_confusion(pred, s.labels, kIgnoreLabel, ev.per_image[i]);
    if (keep_predictions) ev.predictions[i] = std::move(pred);
  });
  for (const auto& cm : ev.per_image) ev.total += cm;
  return ev;
}

TrainOutcome train_network(const RunConfig& cfg, const std::vector<Sample>& train,
                           const std::vector<Sample>& val, int threads,
                           const std::function<void(const TrainLogRow&)>& on_row) {
  cfg.validate();
  if (train.empty()) throw DataError("training set is empty");
  const TrainConfig& sc = cfg.train.solver;

  auto net = Network<float>::build(cfg.net, sc.seed);
  SgdSolver<float> solver(sc);
  GradAccumulator<float> accum(sc.accum_steps);
  auto params = net.params();

  // Epoch order: a fresh shuffle each time the cursor wraps.
  std::mt19937_64 order_rng(sc.seed ^ 0x5eed0f0eULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  auto next_batch = [&] {
    std::vector<const Sample*> batch;
    for (int b = 0; b < cfg.train.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      batch.push_back(&train[order[cursor++]]);
    }
    return batch;
  };

  TrainOutcome out;
  bool have_best = false;
  for (int it = 0; it < sc.max_iter; ++it) {
    TrainLogRow row;
    row.iter = it + 1;
    row.lr = solver.current_lr();
    double loss = 0;
    for (int a = 0; a < sc.accum_steps; ++a) {
      const auto batch = next_batch();
      net.zero_grad();
      auto logits = net.forward(batch_images(batch));
      auto xent = softmax_xent_per_pixel(logits, batch_labels(batch), kIgnoreLabel);
      if (!std::isfinite(xent.loss))
        throw NumericalError("non-finite loss at iteration " + std::to_string(row.iter));
      net.backward(xent.d_logits);
      accum.add(std::span<Param<float>* const>(params));
      loss += xent.loss;
    }
    row.loss = loss / sc.accum_steps;
    accum.take_mean_into(params);
    try {
      solver.step(params);
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(row.iter) + ": " + e.what());
    }

    if (!val.empty() && (row.iter % cfg.train.eval_interval == 0 || row.iter == sc.max_iter)) {
      const double miou = metrics(evaluate(net, val, threads).total).mean_iu;
      row.val_mean_iu = miou;
      if (!have_best || miou > out.best_val_mean_iu) {
        have_best = true;
        out.best_val_mean_iu = miou;
        out.best_iter = row.iter;
        out.best_net = net;
      }
    }
    if (on_row) on_row(row);
    out.log.push_back(row);
  }
  out.final_val_mean_iu = out.log.empty() ? std::nullopt : out.log.back().val_mean_iu;
  if (!have_best) {
    out.best_iter = sc.max_iter;
    out.best_net = net;
  }
  out.final_net = std::move(net);
  return out;
}

}  // namespace contextseg
