#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "contextseg/segdata.hpp"

namespace contextseg::testing {

// Colour key: -1 for background of any cue, else the shape type.
struct ColourGuess {
  int shape_type = -1;
  int cue = 0;
};

inline ColourGuess nearest_colour(const SceneSpec& spec, const std::uint8_t* px) {
  auto dist = [&](Rgb c) {
    const int dr = px[0] - c.r, dg = px[1] - c.g, db = px[2] - c.b;
    return dr * dr + dg * dg + db * db;
  };
  ColourGuess best;
  int best_d = std::numeric_limits<int>::max();
  for (int cue = 0; cue < spec.num_cues; ++cue)
    if (int d = dist(spec.background(cue)); d < best_d) {
      best_d = d;
      best = {-1, cue};
    }
  for (int t = 0; t < spec.num_shape_types; ++t)
    if (int d = dist(SceneSpec::shape_colour(t)); d < best_d) {
      best_d = d;
      best = {t, 0};
    }
  return best;
}

// Classifies each pixel from a window x window neighbourhood only. Shape
// pixels read the cue off any background inside the window; with none in
// view the cue is unknown and cue 0 is guessed.
inline LabelMap window_oracle(const SceneSpec& spec, const RgbImage& image, int window) {
  const int r = window / 2;
  LabelMap out(1, image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const ColourGuess here = nearest_colour(spec, image.at(y, x));
      if (here.shape_type < 0) {
        out.at(0, y, x) = 0;
        continue;
      }
      std::vector<int> votes(spec.num_cues, 0);
      bool seen = false;
      for (int yy = std::max(0, y - r); yy <= std::min(image.height - 1, y + r); ++yy)
        for (int xx = std::max(0, x - r); xx <= std::min(image.width - 1, x + r); ++xx) {
          const ColourGuess g = nearest_colour(spec, image.at(yy, xx));
          if (g.shape_type < 0) {
            ++votes[g.cue];
            seen = true;
          }
        }
      int cue = 0;
      if (seen)
        for (int c = 1; c < spec.num_cues; ++c)
          if (votes[c] > votes[cue]) cue = c;
      out.at(0, y, x) = spec.label_for(here.shape_type, cue);
    }
  return out;
}

// Classifies each pixel by colour and labels shapes with the known cue.
inline LabelMap cue_oracle(const SceneSpec& spec, const RgbImage& image, int cue) {
  LabelMap out(1, image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const ColourGuess g = nearest_colour(spec, image.at(y, x));
      out.at(0, y, x) = g.shape_type < 0 ? 0 : spec.label_for(g.shape_type, cue);
    }
  return out;
}

// Metrics recomputed pixel by pixel, without a confusion matrix.
inline SegMetrics recount_metrics(const std::vector<int>& truth, const std::vector<int>& pred,
                                  int classes, int ignore_label) {
  SegMetrics m;
  double scored = 0, correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == ignore_label) continue;
    scored += 1;
    correct += truth[i] == pred[i];
  }
  m.pixel_acc = correct / scored;
  double acc_sum = 0, iu_sum = 0, fw = 0;
  int acc_n = 0, iu_n = 0;
  for (int c = 0; c < classes; ++c) {
    double tp = 0, fn = 0, fp = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == ignore_label) continue;
      const bool t = truth[i] == c, p = pred[i] == c;
      tp += t && p;
      fn += t && !p;
      fp += !t && p;
    }
    if (tp + fn > 0) {
      acc_sum += tp / (tp + fn);
      ++acc_n;
    }
    if (tp + fn + fp > 0) {
      const double iu = tp / (tp + fn + fp);
      iu_sum += iu;
      ++iu_n;
      fw += (tp + fn) * iu;
    }
  }
  m.mean_acc = acc_sum / acc_n;
  m.mean_iu = iu_sum / iu_n;
  m.fw_iu = fw / scored;
  return m;
}

}  // namespace contextseg::testing
