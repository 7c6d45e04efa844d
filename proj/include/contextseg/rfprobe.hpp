#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "contextseg/graph.hpp"

namespace contextseg {

enum class RFDerivation { kTheoretical, kEmpirical };

std::string to_string(RFDerivation d);

// Inclusive pixel bounds in input space. An empty box carries no bounds.
struct RFBox {
  int top = 0;
  int left = 0;
  int bottom = -1;
  int right = -1;
  RFDerivation derivation = RFDerivation::kTheoretical;
  bool empty = true;

  static RFBox from_bounds(int top, int left, int bottom, int right, RFDerivation d);

  int rows() const { return empty ? 0 : bottom - top + 1; }
  int cols() const { return empty ? 0 : right - left + 1; }
  long area() const { return long(rows()) * cols(); }
  double center_row() const { return 0.5 * (top + bottom); }
  double center_col() const { return 0.5 * (left + right); }
  double half_rows() const { return 0.5 * (rows() - 1); }
  double half_cols() const { return 0.5 * (cols() - 1); }
  bool contains(int row, int col) const {
    return !empty && row >= top && row <= bottom && col >= left && col <= right;
  }
  // Grows every side by `margin` pixels (no clipping).
  RFBox dilated(int margin) const;
  RFBox clipped(int height, int width) const;
  bool operator==(const RFBox&) const = default;
};

// Receptive field size, jump and first-unit center of a trunk prefix.
struct RFGeometry {
  long size = 1;
  long jump = 1;
  double start = 0;
};

RFGeometry rf_geometry(const NetSpec& spec, int layer);

// Input-space box of unit (row, col) of trunk layer `layer` on an image of
// the given extent, clipped to the image. Throws ArgumentError for an
// invalid layer or a unit outside the layer's output.
RFBox theoretical_rf(const NetSpec& spec, int layer, int row, int col, int image_height,
                     int image_width);

// Output extent (rows, cols) of trunk layer `layer` for an input extent.
std::pair<int, int> layer_extent(const NetSpec& spec, int layer, int height, int width);

struct ProbeConfig {
  int patch = 3;
  int stride = 1;
  int trials = 8;
  double threshold_fraction = 0.05;
  // Noise is uniform in [noise_lo, noise_hi), the input value range.
  double noise_lo = -0.5;
  double noise_hi = 0.5;
  std::uint64_t seed = 0;
  // Evaluate each probe on the crop of the image that holds the unit's
  // theoretical receptive field; probes missing that crop read exactly 0.
  bool crop_to_rf = true;
  // Worker threads; 1 is the deterministic single-threaded path. Results do
  // not depend on this value.
  int threads = 1;

  void validate() const;
  bool operator==(const ProbeConfig&) const = default;
};

struct ProbeUnit {
  int layer = 0;
  int channel = 0;
  int row = 0;
  int col = 0;
};

// One mean absolute activation change per probe position. Position (i, j)
// pastes the patch with its top-left pixel at (row_offset(i), col_offset(j)).
struct SensitivityMap {
  int rows = 0;
  int cols = 0;
  int patch = 0;
  int stride = 0;
  int trials = 0;
  int image_height = 0;
  int image_width = 0;
  std::vector<double> values;

  double at(int i, int j) const { return values[std::size_t(i) * cols + j]; }
  double& at(int i, int j) { return values[std::size_t(i) * cols + j]; }
  int row_offset(int i) const;
  int col_offset(int j) const;
  double max_value() const;
};

// ceil((extent - patch) / stride) + 1; the last position is clamped so the
// patch stays inside the image.
int probe_grid_extent(int extent, int patch, int stride);

SensitivityMap empirical_rf(const Network<float>& net, const Tensor<float>& image,
                            const ProbeUnit& unit, const ProbeConfig& cfg);

// Box implied by the probes whose sensitivity is >= threshold_fraction * max.
// A probe at offset o touches pixels [o, o + patch - 1], so the sensitive
// offsets span [top - patch + 1, bottom] for a field [top, bottom]; the box
// undoes that dilation. At an image border the probes are clamped and the
// box takes the inner bound. When the sensitive probes overlap in fewer than
// `patch` pixels the box is their common intersection. An all-zero map gives
// an empty box.
RFBox empirical_box(const SensitivityMap& map, double threshold_fraction);

// empirical area / theoretical area; 0 for an empty empirical box.
double coverage_ratio(const RFBox& empirical, const RFBox& theoretical);

// 16-bit PGM scaled so the map maximum is 65535 (all zeros stay zero).
void write_sensitivity_pgm(const std::filesystem::path& path, const SensitivityMap& map);
// Header row,col,value; row and col are the probe's top-left pixel.
void write_sensitivity_csv(const std::filesystem::path& path, const SensitivityMap& map);
std::string rf_box_csv_header();
std::string rf_box_csv_row(const RFBox& box);

}  // namespace contextseg
