#include "contextseg/rfprobe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "contextseg/netpbm.hpp"
#include "contextseg/parallel.hpp"

namespace contextseg {

std::string to_string(RFDerivation d) {
  return d == RFDerivation::kTheoretical ? "theoretical" : "empirical";
}

RFBox RFBox::from_bounds(int top, int left, int bottom, int right, RFDerivation d) {
  RFBox box;
  box.derivation = d;
  if (bottom < top || right < left) return box;
  box.top = top;
  box.left = left;
  box.bottom = bottom;
  box.right = right;
  box.empty = false;
  return box;
}

RFBox RFBox::dilated(int margin) const {
  if (empty) return *this;
  return from_bounds(top - margin, left - margin, bottom + margin, right + margin,
                     derivation);
}

RFBox RFBox::clipped(int height, int width) const {
  if (empty) return *this;
  return from_bounds(std::max(top, 0), std::max(left, 0), std::min(bottom, height - 1),
                     std::min(right, width - 1), derivation);
}

namespace {

void check_layer(const NetSpec& spec, int layer) {
  if (layer < 0 || layer > spec.last_layer())
    throw ArgumentError("layer index " + std::to_string(layer) + " outside trunk of " +
                        std::to_string(spec.trunk.size()) + " layers");
}

}  // namespace

RFGeometry rf_geometry(const NetSpec& spec, int layer) {
  check_layer(spec, layer);
  RFGeometry g;
  for (int i = 0; i <= layer; ++i) {
    const LayerSpec& l = spec.trunk[i];
    if (l.kind != LayerKind::kConv) continue;
    g.size += (l.kernel - 1) * g.jump;
    g.start += ((l.kernel - 1) / 2.0 - l.pad) * g.jump;
    g.jump *= l.stride;
  }
  return g;
}

std::pair<int, int> layer_extent(const NetSpec& spec, int layer, int height, int width) {
  check_layer(spec, layer);
  for (int i = 0; i <= layer; ++i) {
    const LayerSpec& l = spec.trunk[i];
    if (l.kind != LayerKind::kConv) continue;
    height = conv_output_extent(height, l.kernel, l.stride, l.pad);
    width = conv_output_extent(width, l.kernel, l.stride, l.pad);
  }
  return {height, width};
}

RFBox theoretical_rf(const NetSpec& spec, int layer, int row, int col, int image_height,
                     int image_width) {
  check_layer(spec, layer);
  std::vector<std::pair<int, int>> extents{{image_height, image_width}};
  for (int i = 0; i <= layer; ++i) {
    auto [h, w] = extents.back();
    const LayerSpec& l = spec.trunk[i];
    if (l.kind == LayerKind::kConv) {
      h = conv_output_extent(h, l.kernel, l.stride, l.pad);
      w = conv_output_extent(w, l.kernel, l.stride, l.pad);
    }
    extents.push_back({h, w});
  }
  const auto [h, w] = extents.back();
  if (row < 0 || row >= h || col < 0 || col >= w)
    throw ArgumentError("unit (" + std::to_string(row) + ", " + std::to_string(col) +
                        ") outside layer " + std::to_string(layer) + " output " +
                        std::to_string(h) + "x" + std::to_string(w));
  // Walk the unit's interval down the trunk. Padding positions feed nothing,
  // so each interval is clipped to its layer's extent before mapping through
  // the window: output u reads inputs [u*stride - pad, u*stride - pad + k - 1].
  int top = row, bottom = row, left = col, right = col;
  for (int i = layer; i >= 0; --i) {
    const LayerSpec& l = spec.trunk[i];
    if (l.kind == LayerKind::kConv) {
      top = top * l.stride - l.pad;
      left = left * l.stride - l.pad;
      bottom = bottom * l.stride - l.pad + l.kernel - 1;
      right = right * l.stride - l.pad + l.kernel - 1;
    }
    const auto [ih, iw] = extents[i];
    top = std::max(top, 0);
    left = std::max(left, 0);
    bottom = std::min(bottom, ih - 1);
    right = std::min(right, iw - 1);
    if (top > bottom || left > right) return RFBox::from_bounds(0, 0, -1, -1, RFDerivation::kTheoretical);
  }
  return RFBox::from_bounds(top, left, bottom, right, RFDerivation::kTheoretical);
}

void ProbeConfig::validate() const {
  if (patch < 1) throw ArgumentError("probe patch must be positive");
  if (stride < 1) throw ArgumentError("probe stride must be positive");
  if (trials < 1) throw ArgumentError("probe trials must be positive");
  if (!(threshold_fraction > 0 && threshold_fraction < 1))
    throw ArgumentError("threshold_fraction must be in (0, 1)");
  if (!(noise_lo < noise_hi)) throw ArgumentError("probe noise range is empty");
  if (threads < 1) throw ArgumentError("probe threads must be positive");
}

int probe_grid_extent(int extent, int patch, int stride) {
  if (patch > extent)
    throw ArgumentError("probe patch " + std::to_string(patch) + " larger than image extent " +
                        std::to_string(extent));
  return (extent - patch + stride - 1) / stride + 1;
}

int SensitivityMap::row_offset(int i) const {
  return std::min(i * stride, image_height - patch);
}

int SensitivityMap::col_offset(int j) const {
  return std::min(j * stride, image_width - patch);
}

double SensitivityMap::max_value() const {
  double m = 0;
  for (double v : values) m = std::max(m, v);
  return m;
}

namespace {

// Image window [top, top + rows) x [left, left + cols), all channels.
Tensor<float> crop(const Tensor<float>& image, int top, int left, int rows, int cols) {
  Tensor<float> out(Shape{1, image.channels(), rows, cols});
  for (int c = 0; c < image.channels(); ++c)
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x) out.at(0, c, y, x) = image.at(0, c, top + y, left + x);
  return out;
}

int floor_to_multiple(int v, long m) { return static_cast<int>((v / m) * m); }

}  // namespace

SensitivityMap empirical_rf(const Network<float>& net, const Tensor<float>& image,
                            const ProbeUnit& unit, const ProbeConfig& cfg) {
  cfg.validate();
  const NetSpec& spec = net.spec();
  check_layer(spec, unit.layer);
  if (image.num() != 1 || image.channels() != spec.in_channels)
    throw ShapeError("probe image must be (1, " + std::to_string(spec.in_channels) +
                     ", h, w), got " + image.shape().str());
  const int height = image.height(), width = image.width();
  if (unit.channel < 0 || unit.channel >= spec.layer_channels(unit.layer))
    throw ArgumentError("probe channel " + std::to_string(unit.channel) + " out of range");

  SensitivityMap map;
  map.patch = cfg.patch;
  map.stride = cfg.stride;
  map.trials = cfg.trials;
  map.image_height = height;
  map.image_width = width;
  map.rows = probe_grid_extent(height, cfg.patch, cfg.stride);
  map.cols = probe_grid_extent(width, cfg.patch, cfg.stride);
  map.values.assign(std::size_t(map.rows) * map.cols, 0.0);

  const RFBox field =
      theoretical_rf(spec, unit.layer, unit.row, unit.col, height, width);

  // Working window: the whole image, or the theoretical field aligned so the
  // window's offset is a multiple of the cumulative stride.
  int top = 0, left = 0, rows = height, cols = width;
  int unit_row = unit.row, unit_col = unit.col;
  if (cfg.crop_to_rf) {
    if (field.empty) return map;
    const long jump = rf_geometry(spec, unit.layer).jump;
    top = floor_to_multiple(field.top, jump);
    left = floor_to_multiple(field.left, jump);
    rows = field.bottom - top + 1;
    cols = field.right - left + 1;
    unit_row -= static_cast<int>(top / jump);
    unit_col -= static_cast<int>(left / jump);
  }
  const Tensor<float> window = cfg.crop_to_rf ? crop(image, top, left, rows, cols) : image;

  const int workers = std::max(1, cfg.threads);
  std::vector<Network<float>> nets(static_cast<std::size_t>(workers), net);
  const auto unit_value = [&](Network<float>& n, const Tensor<float>& x) {
    const Tensor<float> act = n.forward_to(x, unit.layer);
    if (unit_row >= act.height() || unit_col >= act.width())
      throw ContractError("probe window lost the unit; crop alignment is wrong");
    return static_cast<double>(act.at(0, unit.channel, unit_row, unit_col));
  };
  const double baseline = unit_value(nets[0], window);

  const int channels = image.channels();
  const int patch = cfg.patch;
  parallel_for(map.values.size(), workers, [&](int worker, std::size_t idx) {
    const int i = static_cast<int>(idx) / map.cols;
    const int j = static_cast<int>(idx) % map.cols;
    const int py = map.row_offset(i) - top, px = map.col_offset(j) - left;
    if (py + patch <= 0 || px + patch <= 0 || py >= rows || px >= cols) return;

    // Noise depends only on (seed, position, trial), never on the window.
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                      static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> noise(cfg.noise_lo, cfg.noise_hi);
    Tensor<float> probed = window;
    double total = 0;
    for (int t = 0; t < cfg.trials; ++t) {
      for (int c = 0; c < channels; ++c)
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x) {
            const float v = static_cast<float>(noise(rng));
            const int wy = py + y, wx = px + x;
            if (wy >= 0 && wy < rows && wx >= 0 && wx < cols) probed.at(0, c, wy, wx) = v;
          }
      total += std::abs(unit_value(nets[worker], probed) - baseline);
    }
    map.values[idx] = total / cfg.trials;
  });
  return map;
}

RFBox empirical_box(const SensitivityMap& map, double threshold_fraction) {
  if (!(threshold_fraction > 0 && threshold_fraction < 1))
    throw ArgumentError("threshold_fraction must be in (0, 1)");
  RFBox none;
  none.derivation = RFDerivation::kEmpirical;
  const double peak = map.max_value();
  if (!(peak > 0)) return none;
  const double cut = threshold_fraction * peak;
  int min_r = map.image_height, max_r = -1, min_c = map.image_width, max_c = -1;
  for (int i = 0; i < map.rows; ++i)
    for (int j = 0; j < map.cols; ++j) {
      const double v = map.at(i, j);
      if (!(v > 0 && v >= cut)) continue;
      min_r = std::min(min_r, map.row_offset(i));
      max_r = std::max(max_r, map.row_offset(i));
      min_c = std::min(min_c, map.col_offset(j));
      max_c = std::max(max_c, map.col_offset(j));
    }
  const int p = map.patch - 1;
  const auto span = [p](int lo, int hi) {
    const int a = lo + p, b = hi;
    return a <= b ? std::pair{a, b} : std::pair{b, a};
  };
  const auto [top, bottom] = span(min_r, max_r);
  const auto [left, right] = span(min_c, max_c);
  return RFBox::from_bounds(top, left, bottom, right, RFDerivation::kEmpirical)
      .clipped(map.image_height, map.image_width);
}

double coverage_ratio(const RFBox& empirical, const RFBox& theoretical) {
  if (empirical.empty) return 0.0;
  if (theoretical.empty) throw ArgumentError("coverage ratio against an empty theoretical box");
  return static_cast<double>(empirical.area()) / static_cast<double>(theoretical.area());
}

void write_sensitivity_pgm(const std::filesystem::path& path, const SensitivityMap& map) {
  GrayImage img(map.rows, map.cols, 65535);
  const double peak = map.max_value();
  for (std::size_t i = 0; i < map.values.size(); ++i)
    img.pixels[i] = peak > 0
                        ? static_cast<std::uint16_t>(std::lround(map.values[i] / peak * 65535))
                        : 0;
  write_pgm(path, img);
}

void write_sensitivity_csv(const std::filesystem::path& path, const SensitivityMap& map) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "row,col,value\n" << std::setprecision(17);
  for (int i = 0; i < map.rows; ++i)
    for (int j = 0; j < map.cols; ++j)
      out << map.row_offset(i) << ',' << map.col_offset(j) << ',' << map.at(i, j) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

std::string rf_box_csv_header() {
  return "derivation,empty,top,left,bottom,right,center_row,center_col,half_rows,half_cols";
}

std::string rf_box_csv_row(const RFBox& box) {
  std::ostringstream os;
  os << to_string(box.derivation) << ',' << (box.empty ? 1 : 0) << ',';
  if (box.empty) {
    os << ",,,,,,,";
  } else {
    os << box.top << ',' << box.left << ',' << box.bottom << ',' << box.right << ','
       << box.center_row() << ',' << box.center_col() << ',' << box.half_rows() << ','
       << box.half_cols();
  }
  return os.str();
}

}  // namespace contextseg
