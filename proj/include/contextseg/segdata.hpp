#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "contextseg/label_map.hpp"
#include "contextseg/netpbm.hpp"
#include "contextseg/tensor.hpp"

namespace contextseg {

inline constexpr int kIgnoreLabel = 255;

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

// Scenes: a gray background tinted by one of `num_cues` global cues, with
// solid square shapes of `num_shape_types` colours on top. A shape pixel's
// label is 1 + type * num_cues + cue, so the label of a shape depends on a
// tint that is only visible on the background.
struct SceneSpec {
  int image_size = 32;
  int num_cues = 2;
  int num_shape_types = 2;
  int min_shapes = 1;
  int max_shapes = 2;
  int min_shape_extent = 12;
  int max_shape_extent = 22;
  // Scales the tint offset from gray, in (0, 1].
  double cue_strength = 1.0;
  // Per-channel noise, uniform integer in [-noise, noise], in 8-bit units.
  int noise = 6;
  std::uint64_t seed = 1;

  static constexpr int kMaxCues = 4;
  static constexpr int kMaxShapeTypes = 4;

  int num_classes() const { return 1 + num_shape_types * num_cues; }
  int label_for(int shape_type, int cue) const { return 1 + shape_type * num_cues + cue; }
  int shape_type_of(int label) const { return (label - 1) / num_cues; }
  int cue_of(int label) const { return (label - 1) % num_cues; }
  Rgb background(int cue) const;
  static Rgb shape_colour(int shape_type);

  // Throws ArgumentError.
  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

struct Sample {
  int index = 0;
  int cue = 0;
  RgbImage image;
  LabelMap labels{1, 1, 1};
};

// Sample `index` of the stream defined by spec.seed. Samples are drawn
// independently per index, so any index range reproduces exactly. Placement
// is retried a bounded number of times; DataError if the shapes cannot fit.
Sample generate_sample(const SceneSpec& spec, int index);
std::vector<Sample> generate(const SceneSpec& spec, int count, int first_index = 0);

// byte / 255 - 0.5, shape (1, 3, h, w).
Tensor<float> image_to_tensor(const RgbImage& image);
// Stacks images into one (n, 3, h, w) batch and labels into (n, h, w).
Tensor<float> batch_images(const std::vector<const Sample*>& samples);
LabelMap batch_labels(const std::vector<const Sample*>& samples);

GrayImage labels_to_pgm(const LabelMap& labels, int n = 0);
LabelMap pgm_to_labels(const GrayImage& image);

// Dataset directory: images/NNNNN.ppm, labels/NNNNN.pgm and manifest.csv
// with header index,image,label,cue (paths relative to the directory).
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::filesystem::path& dir);
std::string sample_stem(int index);

// Per-pixel argmax over channels; ties go to the lower class.
LabelMap argmax_labels(const Tensor<float>& logits);

// Fixed colour per class, for prediction maps. Ignored pixels are black.
Rgb class_colour(int label);
RgbImage colourize(const LabelMap& labels, int n = 0);

struct ConfusionMatrix {
  int classes = 0;
  // counts[t * classes + p]
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(int num_classes);
  std::uint64_t at(int truth, int pred) const { return counts[std::size_t(truth) * classes + pred]; }
  std::uint64_t& at(int truth, int pred) { return counts[std::size_t(truth) * classes + pred]; }
  std::uint64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

// Adds one count per scored pixel. DataError for a label or prediction
// outside [0, classes) on a scored pixel; ShapeError on mismatched maps.
void accumulate_confusion(const LabelMap& pred, const LabelMap& truth, int ignore_label,
                          ConfusionMatrix& cm);

struct SegMetrics {
  double pixel_acc = 0;
  double mean_acc = 0;
  double mean_iu = 0;
  double fw_iu = 0;
  // Per class; NaN where the class is excluded from the mean.
  std::vector<double> class_acc;
  std::vector<double> class_iu;
};

// Classes never present as truth are left out of mean_acc; classes with an
// empty union are left out of mean_iu. DataError on an empty matrix.
SegMetrics metrics(const ConfusionMatrix& cm);

inline constexpr const char* kMetricsHeader = "pixel_acc,mean_acc,mean_iu,fw_iu";

}  // namespace contextseg
