#include "contextseg/segdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "contextseg/error.hpp"

namespace contextseg {
namespace {

// Tint directions (r, g, b) applied to mid gray, scaled by the cue strength.
constexpr std::array<std::array<int, 3>, SceneSpec::kMaxCues> kTints{{
    {48, 0, -48},
    {-48, 0, 48},
    {0, 48, -48},
    {0, -48, 48},
}};

constexpr std::array<Rgb, SceneSpec::kMaxShapeTypes> kShapeColours{{
    {230, 210, 40},
    {40, 220, 230},
    {220, 40, 200},
    {250, 250, 250},
}};

std::uint8_t clamp_byte(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

struct Square {
  int top, left, extent, type;
  bool overlaps(const Square& o) const {
    return top < o.top + o.extent && o.top < top + extent && left < o.left + o.extent &&
           o.left < left + extent;
  }
};

constexpr int kPlacementAttempts = 64;
constexpr int kSceneAttempts = 16;

}  // namespace

Rgb SceneSpec::background(int cue) const {
  const auto& t = kTints.at(cue);
  auto shade = [&](int d) { return clamp_byte(128 + static_cast<int>(std::lround(d * cue_strength))); };
  return {shade(t[0]), shade(t[1]), shade(t[2])};
}

Rgb SceneSpec::shape_colour(int shape_type) { return kShapeColours.at(shape_type); }

void SceneSpec::validate() const {
  if (image_size < 4) throw ArgumentError("scene: image_size must be >= 4");
  if (num_cues < 1 || num_cues > kMaxCues)
    throw ArgumentError("scene: num_cues must be in [1, " + std::to_string(kMaxCues) + "]");
  if (num_shape_types < 1 || num_shape_types > kMaxShapeTypes)
    throw ArgumentError("scene: num_shape_types must be in [1, " +
                        std::to_string(kMaxShapeTypes) + "]");
  if (num_classes() >= kIgnoreLabel) throw ArgumentError("scene: too many classes");
  if (min_shapes < 1 || max_shapes < min_shapes)
    throw ArgumentError("scene: need 1 <= min_shapes <= max_shapes");
  if (min_shape_extent < 1 || max_shape_extent < min_shape_extent ||
      max_shape_extent > image_size)
    throw ArgumentError("scene: need 1 <= min_shape_extent <= max_shape_extent <= image_size");
  if (!(cue_strength > 0 && cue_strength <= 1))
    throw ArgumentError("scene: cue_strength must be in (0, 1]");
  if (noise < 0 || noise > 64) throw ArgumentError("scene: noise must be in [0, 64]");
}

Sample generate_sample(const SceneSpec& spec, int index) {
  spec.validate();
  if (index < 0) throw ArgumentError("sample index must be >= 0");
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed),
                    static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const int size = spec.image_size;
  Sample s;
  s.index = index;
  s.cue = uniform(0, spec.num_cues - 1);
  const int want = uniform(spec.min_shapes, spec.max_shapes);

  std::vector<Square> shapes;
  for (int scene = 0; scene < kSceneAttempts && int(shapes.size()) < want; ++scene) {
    shapes.clear();
    for (int k = 0; k < want; ++k) {
      const int type = uniform(0, spec.num_shape_types - 1);
      for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        const int extent = uniform(spec.min_shape_extent, spec.max_shape_extent);
        Square sq{uniform(0, size - extent), uniform(0, size - extent), extent, type};
        if (std::none_of(shapes.begin(), shapes.end(),
                         [&](const Square& o) { return sq.overlaps(o); })) {
          shapes.push_back(sq);
          break;
        }
      }
      if (int(shapes.size()) != k + 1) break;
    }
  }
  if (int(shapes.size()) < want)
    throw DataError("sample " + std::to_string(index) + ": cannot fit " + std::to_string(want) +
                    " shapes of extent up to " + std::to_string(spec.max_shape_extent) +
                    " in " + std::to_string(size) + "x" + std::to_string(size) + " after " +
                    std::to_string(kSceneAttempts) + " attempts");

  s.labels = LabelMap(1, size, size, 0);
  std::vector<Rgb> clean(std::size_t(size) * size, spec.background(s.cue));
  for (const Square& sq : shapes)
    for (int y = sq.top; y < sq.top + sq.extent; ++y)
      for (int x = sq.left; x < sq.left + sq.extent; ++x) {
        clean[std::size_t(y) * size + x] = SceneSpec::shape_colour(sq.type);
        s.labels.at(0, y, x) = spec.label_for(sq.type, s.cue);
      }

  s.image = RgbImage(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Rgb c = clean[std::size_t(y) * size + x];
      std::uint8_t* px = s.image.at(y, x);
      px[0] = clamp_byte(c.r + uniform(-spec.noise, spec.noise));
      px[1] = clamp_byte(c.g + uniform(-spec.noise, spec.noise));
      px[2] = clamp_byte(c.b + uniform(-spec.noise, spec.noise));
    }
  return s;
}

std::vector<Sample> generate(const SceneSpec& spec, int count, int first_index) {
  if (count < 0) throw ArgumentError("sample count must be >= 0");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_sample(spec, first_index + i));
  return out;
}

Tensor<float> image_to_tensor(const RgbImage& image) {
  Tensor<float> t(Shape{1, 3, image.height, image.width});
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) = static_cast<float>(image.at(y, x)[c] / 255.0 - 0.5);
  return t;
}

Tensor<float> batch_images(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ArgumentError("empty batch");
  const int h = samples[0]->image.height, w = samples[0]->image.width;
  Tensor<float> t(Shape{static_cast<int>(samples.size()), 3, h, w});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const RgbImage& img = samples[n]->image;
    if (img.height != h || img.width != w) throw ShapeError("batch images differ in size");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          t.at(static_cast<int>(n), c, y, x) = static_cast<float>(img.at(y, x)[c] / 255.0 - 0.5);
  }
  return t;
}

LabelMap batch_labels(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ArgumentError("empty batch");
  const int h = samples[0]->labels.h, w = samples[0]->labels.w;
  LabelMap out(static_cast<int>(samples.size()), h, w);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const LabelMap& l = samples[n]->labels;
    if (l.h != h || l.w != w || l.n != 1) throw ShapeError("batch label maps differ in size");
    std::copy(l.data.begin(), l.data.end(), out.data.begin() + static_cast<long>(n) * h * w);
  }
  return out;
}

GrayImage labels_to_pgm(const LabelMap& labels, int n) {
  GrayImage img(labels.h, labels.w, 255);
  for (int y = 0; y < labels.h; ++y)
    for (int x = 0; x < labels.w; ++x) {
      const int v = labels.at(n, y, x);
      if (v < 0 || v > 255) throw DataError("label " + std::to_string(v) + " does not fit a byte");
      img.at(y, x) = static_cast<std::uint16_t>(v);
    }
  return img;
}

LabelMap pgm_to_labels(const GrayImage& image) {
  if (image.maxval > 255) throw DataError("label maps must be 8-bit");
  LabelMap labels(1, image.height, image.width);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) labels.data[i] = image.pixels[i];
  return labels;
}

std::string sample_stem(int index) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (!ec) std::filesystem::create_directories(dir / "labels", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  manifest << "index,image,label,cue\n";
  for (const Sample& s : samples) {
    const std::string stem = sample_stem(s.index);
    const std::string image_rel = "images/" + stem + ".ppm";
    const std::string label_rel = "labels/" + stem + ".pgm";
    write_ppm(dir / image_rel, s.image);
    write_pgm(dir / label_rel, labels_to_pgm(s.labels));
    manifest << s.index << ',' << image_rel << ',' << label_rel << ',' << s.cue << '\n';
  }
  if (!manifest) throw IoError("short write to manifest in " + dir.string());
}

std::vector<Sample> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot open " + (dir / "manifest.csv").string());
  std::string line;
  if (!std::getline(manifest, line) || line != "index,image,label,cue")
    throw DataError((dir / "manifest.csv").string() + ": unexpected header");
  std::vector<Sample> out;
  int lineno = 1;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 4)
      throw DataError("manifest line " + std::to_string(lineno) + ": expected 4 fields");
    Sample s;
    try {
      s.index = std::stoi(fields[0]);
      s.cue = std::stoi(fields[3]);
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(lineno) + ": bad number");
    }
    s.image = read_ppm(dir / fields[1]);
    s.labels = pgm_to_labels(read_pgm(dir / fields[2]));
    if (s.labels.h != s.image.height || s.labels.w != s.image.width)
      throw DataError("sample " + std::to_string(s.index) + ": label map and image differ in size");
    out.push_back(std::move(s));
  }
  return out;
}

LabelMap argmax_labels(const Tensor<float>& logits) {
  LabelMap out(logits.num(), logits.height(), logits.width());
  for (int n = 0; n < logits.num(); ++n)
    for (int y = 0; y < logits.height(); ++y)
      for (int x = 0; x < logits.width(); ++x) {
        int best = 0;
        for (int c = 1; c < logits.channels(); ++c)
          if (logits.at(n, c, y, x) > logits.at(n, best, y, x)) best = c;
        out.at(n, y, x) = best;
      }
  return out;
}

Rgb class_colour(int label) {
  if (label == kIgnoreLabel) return {0, 0, 0};
  // VOC-style bit-interleaved palette; class 0 maps to black, so shift by one
  // to keep background visible.
  int id = label + 1;
  Rgb c;
  for (int shift = 7; shift >= 0 && id > 0; --shift, id >>= 3) {
    c.r |= static_cast<std::uint8_t>(((id >> 0) & 1) << shift);
    c.g |= static_cast<std::uint8_t>(((id >> 1) & 1) << shift);
    c.b |= static_cast<std::uint8_t>(((id >> 2) & 1) << shift);
  }
  return c;
}

RgbImage colourize(const LabelMap& labels, int n) {
  RgbImage img(labels.h, labels.w);
  for (int y = 0; y < labels.h; ++y)
    for (int x = 0; x < labels.w; ++x) {
      const Rgb c = class_colour(labels.at(n, y, x));
      std::uint8_t* px = img.at(y, x);
      px[0] = c.r;
      px[1] = c.g;
      px[2] = c.b;
    }
  return img;
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes(num_classes), counts(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw ArgumentError("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts) t += v;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes != classes) throw ShapeError("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

void accumulate_confusion(const LabelMap& pred, const LabelMap& truth, int ignore_label,
                          ConfusionMatrix& cm) {
  if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w)
    throw ShapeError("prediction and label maps differ in shape");
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const int t = truth.data[i];
    if (t == ignore_label) continue;
    const int p = pred.data[i];
    if (t < 0 || t >= cm.classes)
      throw DataError("label " + std::to_string(t) + " outside " + std::to_string(cm.classes) +
                      " classes");
    if (p < 0 || p >= cm.classes)
      throw DataError("prediction " + std::to_string(p) + " outside " +
                      std::to_string(cm.classes) + " classes");
    ++cm.at(t, p);
  }
}

SegMetrics metrics(const ConfusionMatrix& cm) {
  const int k = cm.classes;
  std::vector<double> truth(k, 0), predicted(k, 0), hit(k, 0);
  double total = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double v = static_cast<double>(cm.at(i, j));
      truth[i] += v;
      predicted[j] += v;
      total += v;
    }
  if (total == 0) throw DataError("metrics are undefined for an empty confusion matrix");
  for (int i = 0; i < k; ++i) hit[i] = static_cast<double>(cm.at(i, i));

  SegMetrics m;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.class_acc.assign(k, nan);
  m.class_iu.assign(k, nan);
  double correct = 0, acc_sum = 0, iu_sum = 0, fw = 0;
  int acc_n = 0, iu_n = 0;
  for (int i = 0; i < k; ++i) {
    correct += hit[i];
    if (truth[i] > 0) {
      m.class_acc[i] = hit[i] / truth[i];
      acc_sum += m.class_acc[i];
      ++acc_n;
    }
    const double uni = truth[i] + predicted[i] - hit[i];
    if (uni > 0) {
      m.class_iu[i] = hit[i] / uni;
      iu_sum += m.class_iu[i];
      ++iu_n;
      fw += truth[i] * m.class_iu[i];
    }
  }
  m.pixel_acc = correct / total;
  m.mean_acc = acc_n ? acc_sum / acc_n : 0.0;
  m.mean_iu = iu_n ? iu_sum / iu_n : 0.0;
  m.fw_iu = fw / total;
  return m;
}

}  // namespace contextseg
