#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "contextseg/segdata.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace contextseg;
using namespace contextseg::testing;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("contextseg_segdata_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ConfusionMatrix from_rows(std::vector<std::vector<std::uint64_t>> rows) {
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (int i = 0; i < cm.classes; ++i)
    for (int j = 0; j < cm.classes; ++j) cm.at(i, j) = rows[i][j];
  return cm;
}

void check_metrics_close(const SegMetrics& a, const SegMetrics& b, double tol) {
  CHECK(std::abs(a.pixel_acc - b.pixel_acc) <= tol);
  CHECK(std::abs(a.mean_acc - b.mean_acc) <= tol);
  CHECK(std::abs(a.mean_iu - b.mean_iu) <= tol);
  CHECK(std::abs(a.fw_iu - b.fw_iu) <= tol);
}

}  // namespace

TEST_CASE("scene spec defaults and validation") {
  SceneSpec spec;
  CHECK(spec.num_classes() == 5);
  CHECK(spec.label_for(0, 0) == 1);
  CHECK(spec.label_for(1, 1) == 4);
  CHECK(spec.shape_type_of(4) == 1);
  CHECK(spec.cue_of(3) == 0);
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.background(0) != spec.background(1));

  auto bad = [](auto mutate) {
    SceneSpec s;
    mutate(s);
    CHECK_THROWS_AS(s.validate(), ArgumentError);
  };
  bad([](SceneSpec& s) { s.num_cues = 0; });
  bad([](SceneSpec& s) { s.num_cues = 5; });
  bad([](SceneSpec& s) { s.max_shapes = 0; });
  bad([](SceneSpec& s) { s.max_shape_extent = 40; });
  bad([](SceneSpec& s) { s.cue_strength = 0; });
  bad([](SceneSpec& s) { s.noise = -1; });
}

TEST_CASE("generation is deterministic per index") {
  SceneSpec spec;
  const auto a = generate(spec, 6);
  const auto b = generate(spec, 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].labels == b[i].labels);
    CHECK(a[i].cue == b[i].cue);
  }
  // any index range reproduces the same samples
  const auto tail = generate(spec, 2, 4);
  CHECK(tail[0].image == a[4].image);
  CHECK(tail[1].labels == a[5].labels);

  spec.seed = 2;
  CHECK(generate_sample(spec, 0).image != a[0].image);
  CHECK(generate(spec, 0).empty());
}

TEST_CASE("generated labels and colours follow the scene rules") {
  SceneSpec spec;
  std::vector<int> cues_seen(spec.num_cues, 0);
  for (const Sample& s : generate(spec, 60)) {
    ++cues_seen[s.cue];
    int shape_pixels = 0;
    for (int y = 0; y < spec.image_size; ++y)
      for (int x = 0; x < spec.image_size; ++x) {
        const int label = s.labels.at(0, y, x);
        REQUIRE(label >= 0);
        REQUIRE(label < spec.num_classes());
        const std::uint8_t* px = s.image.at(y, x);
        const Rgb want = label == 0 ? spec.background(s.cue)
                                    : SceneSpec::shape_colour(spec.shape_type_of(label));
        CHECK(std::abs(px[0] - want.r) <= spec.noise);
        CHECK(std::abs(px[1] - want.g) <= spec.noise);
        CHECK(std::abs(px[2] - want.b) <= spec.noise);
        if (label != 0) {
          ++shape_pixels;
          CHECK(spec.cue_of(label) == s.cue);
        }
      }
    CHECK(shape_pixels >= spec.min_shape_extent * spec.min_shape_extent);
    CHECK(shape_pixels <= spec.max_shapes * spec.max_shape_extent * spec.max_shape_extent);
  }
  for (int c : cues_seen) CHECK(c > 0);
}

TEST_CASE("shapes that cannot fit are reported") {
  SceneSpec spec;
  spec.image_size = 16;
  spec.min_shapes = 2;
  spec.max_shapes = 2;
  spec.min_shape_extent = 12;
  spec.max_shape_extent = 12;
  CHECK_THROWS_AS(generate_sample(spec, 0), DataError);
}

TEST_CASE("window oracle is capped below the cue oracle") {
  SceneSpec spec;
  ConfusionMatrix local(spec.num_classes()), global(spec.num_classes());
  for (const Sample& s : generate(spec, 50, 200)) {
    accumulate_confusion(window_oracle(spec, s.image, 9), s.labels, kIgnoreLabel, local);
    accumulate_confusion(cue_oracle(spec, s.image, s.cue), s.labels, kIgnoreLabel, global);
  }
  const SegMetrics g = metrics(global);
  const SegMetrics l = metrics(local);
  CHECK(g.mean_iu == 1.0);
  CHECK(g.pixel_acc == 1.0);
  CHECK(l.mean_iu < 1.0);
  MESSAGE("window oracle mean_iu " << l.mean_iu << ", cue oracle " << g.mean_iu);
  // a window covering the whole image always sees background
  ConfusionMatrix wide(spec.num_classes());
  for (const Sample& s : generate(spec, 10, 200))
    accumulate_confusion(window_oracle(spec, s.image, 2 * spec.image_size + 1), s.labels,
                         kIgnoreLabel, wide);
  CHECK(metrics(wide).mean_iu == 1.0);
}

TEST_CASE("image tensors and batches") {
  SceneSpec spec;
  const auto samples = generate(spec, 3);
  const Tensor<float> t = image_to_tensor(samples[1].image);
  CHECK(t.shape() == Shape{1, 3, 32, 32});
  CHECK(t.at(0, 2, 5, 7) == static_cast<float>(samples[1].image.at(5, 7)[2] / 255.0 - 0.5));
  for (float v : t.data()) {
    CHECK(v >= -0.5f);
    CHECK(v <= 0.5f);
  }
  const Tensor<float> b = batch_images({&samples[0], &samples[1], &samples[2]});
  CHECK(b.shape() == Shape{3, 3, 32, 32});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 32 * 32; ++i) CHECK(b.plane(1, c)[i] == t.plane(0, c)[i]);
  const LabelMap l = batch_labels({&samples[0], &samples[2]});
  CHECK(l.n == 2);
  CHECK(l.at(1, 10, 11) == samples[2].labels.at(0, 10, 11));
}

TEST_CASE("netpbm round trips and malformed input") {
  const auto dir = scratch("netpbm");
  RgbImage rgb(3, 4);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<std::uint8_t>(i * 7);
  write_ppm(dir / "a.ppm", rgb);
  CHECK(read_ppm(dir / "a.ppm") == rgb);

  GrayImage g8(2, 5, 255);
  for (std::size_t i = 0; i < g8.pixels.size(); ++i) g8.pixels[i] = static_cast<std::uint16_t>(i * 20);
  write_pgm(dir / "a.pgm", g8);
  CHECK(read_pgm(dir / "a.pgm") == g8);
  CHECK(std::filesystem::file_size(dir / "a.pgm") == std::string("P5\n5 2\n255\n").size() + 10);

  GrayImage g16(2, 2, 65535);
  g16.pixels = {0, 256, 65535, 1234};
  write_pgm(dir / "b.pgm", g16);
  CHECK(read_pgm(dir / "b.pgm") == g16);

  {
    std::ofstream f(dir / "comment.pgm", std::ios::binary);
    f << "P5\n# made by hand\n2 1\n255\n" << char(3) << char(4);
  }
  const GrayImage c = read_pgm(dir / "comment.pgm");
  CHECK(c.width == 2);
  CHECK(c.at(0, 1) == 4);

  {
    std::ofstream f(dir / "short.ppm", std::ios::binary);
    f << "P6\n4 4\n255\n" << "abc";
  }
  CHECK_THROWS_AS(read_ppm(dir / "short.ppm"), DataError);
  CHECK_THROWS_AS(read_ppm(dir / "a.pgm"), DataError);
  CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), IoError);
  CHECK_THROWS_AS(write_pgm(dir / "no" / "such" / "dir.pgm", g8), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset directory round trip") {
  const auto dir = scratch("dataset");
  SceneSpec spec;
  const auto samples = generate(spec, 4, 10);
  write_dataset(dir, samples);
  CHECK(std::filesystem::exists(dir / "images" / "00010.ppm"));
  CHECK(std::filesystem::exists(dir / "labels" / "00013.pgm"));
  std::ifstream manifest(dir / "manifest.csv");
  std::string header, first;
  std::getline(manifest, header);
  std::getline(manifest, first);
  CHECK(header == "index,image,label,cue");
  CHECK(first == "10,images/00010.ppm,labels/00010.pgm," + std::to_string(samples[0].cue));

  const auto back = read_dataset(dir);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].index == samples[i].index);
    CHECK(back[i].cue == samples[i].cue);
    CHECK(back[i].image == samples[i].image);
    CHECK(back[i].labels == samples[i].labels);
  }
  write_dataset(dir / "empty", {});
  CHECK(read_dataset(dir / "empty").empty());
  CHECK_THROWS_AS(read_dataset(dir / "nowhere"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("confusion accumulation examples") {
  LabelMap truth(1, 1, 2), pred(1, 1, 2);
  truth.data = {0, 1};
  pred.data = {0, 0};
  ConfusionMatrix cm(2);
  accumulate_confusion(pred, truth, kIgnoreLabel, cm);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(1, 0) == 1);
  CHECK(cm.total() == 2);

  ConfusionMatrix perfect(3);
  LabelMap t3(1, 2, 3);
  t3.data = {0, 1, 2, 2, 1, 0};
  accumulate_confusion(t3, t3, kIgnoreLabel, perfect);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(perfect.at(i, j) == (i == j ? 2u : 0u));

  ConfusionMatrix untouched(3);
  LabelMap ignored(1, 2, 3, kIgnoreLabel);
  accumulate_confusion(t3, ignored, kIgnoreLabel, untouched);
  CHECK(untouched.total() == 0);

  LabelMap out_of_range = t3;
  out_of_range.data[2] = 3;
  CHECK_THROWS_AS(accumulate_confusion(t3, out_of_range, kIgnoreLabel, perfect), DataError);
  CHECK_THROWS_AS(accumulate_confusion(out_of_range, t3, kIgnoreLabel, perfect), DataError);
  CHECK_THROWS_AS(accumulate_confusion(pred, t3, kIgnoreLabel, perfect), ShapeError);
}

TEST_CASE("metrics examples") {
  const SegMetrics diag = metrics(from_rows({{5, 0, 0}, {0, 3, 0}, {0, 0, 9}}));
  CHECK(diag.pixel_acc == 1.0);
  CHECK(diag.mean_acc == 1.0);
  CHECK(diag.mean_iu == 1.0);
  CHECK(diag.fw_iu == 1.0);

  const SegMetrics half = metrics(from_rows({{1, 1}, {1, 1}}));
  CHECK(half.pixel_acc == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(half.mean_acc == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(half.class_iu[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(half.mean_iu == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(half.fw_iu == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // class 1 never appears: excluded from both means
  const SegMetrics absent = metrics(from_rows({{2, 0, 0}, {0, 0, 0}, {1, 0, 1}}));
  CHECK(std::isnan(absent.class_acc[1]));
  CHECK(std::isnan(absent.class_iu[1]));
  CHECK(absent.mean_acc == doctest::Approx((1.0 + 0.5) / 2));
  CHECK(absent.mean_iu == doctest::Approx((2.0 / 3 + 0.5) / 2));

  CHECK_THROWS_AS(metrics(ConfusionMatrix(3)), DataError);
}

TEST_CASE("metrics agree with a per-pixel recount") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + trial % 5;
    const int h = 1 + trial % 4, w = 2 + trial % 7;
    LabelMap truth(1, h, w), pred(1, h, w);
    std::uniform_int_distribution<int> cls(0, classes - 1);
    std::uniform_real_distribution<double> u(0, 1);
    for (std::size_t i = 0; i < truth.data.size(); ++i) {
      truth.data[i] = u(rng) < 0.1 ? kIgnoreLabel : cls(rng);
      pred.data[i] = cls(rng);
    }
    truth.data[0] = cls(rng);  // at least one scored pixel
    ConfusionMatrix cm(classes);
    accumulate_confusion(pred, truth, kIgnoreLabel, cm);
    CAPTURE(trial);
    check_metrics_close(metrics(cm), recount_metrics(truth.data, pred.data, classes, kIgnoreLabel),
                        1e-9);
  }
}

TEST_CASE("metrics are invariant to a consistent class permutation") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 4;
    ConfusionMatrix cm(k);
    for (auto& v : cm.counts) v = std::uniform_int_distribution<int>(0, 9)(rng);
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ConfusionMatrix permuted(k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) permuted.at(perm[i], perm[j]) = cm.at(i, j);
    if (cm.total() == 0) continue;
    const SegMetrics a = metrics(cm), b = metrics(permuted);
    check_metrics_close(a, b, 1e-12);
    for (int i = 0; i < k; ++i)
      if (!std::isnan(a.class_iu[i])) CHECK(a.class_iu[i] == doctest::Approx(b.class_iu[perm[i]]));
    for (double v : {a.pixel_acc, a.mean_acc, a.mean_iu, a.fw_iu}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("pixel accuracy and fw_iu combine by counts") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    ConfusionMatrix a(3), b(3);
    for (auto& v : a.counts) v = std::uniform_int_distribution<int>(1, 9)(rng);
    for (auto& v : b.counts) v = std::uniform_int_distribution<int>(1, 9)(rng);
    ConfusionMatrix sum = a;
    sum += b;
    const double na = double(a.total()), nb = double(b.total());
    CHECK(metrics(sum).pixel_acc ==
          doctest::Approx((metrics(a).pixel_acc * na + metrics(b).pixel_acc * nb) / (na + nb)));
    // merge order does not matter
    ConfusionMatrix other = b;
    other += a;
    CHECK(other == sum);
  }
}

TEST_CASE("argmax and colour maps") {
  Tensor<float> logits(Shape{1, 3, 1, 3}, std::vector<float>{1, 0, 2, 3, 0, 2, 2, 0, 1});
  const LabelMap best = argmax_labels(logits);
  CHECK(best.data == std::vector<int>{1, 0, 0});
  Tensor<float> tie(Shape{1, 2, 1, 1}, 1.0f);
  CHECK(argmax_labels(tie).data[0] == 0);

  CHECK(class_colour(0) != class_colour(1));
  CHECK(class_colour(kIgnoreLabel) == Rgb{0, 0, 0});
  for (int a = 0; a < 21; ++a)
    for (int b = a + 1; b < 21; ++b) CHECK(class_colour(a) != class_colour(b));
  const RgbImage img = colourize(best);
  CHECK(img.width == 3);
  CHECK(img.at(0, 0)[0] == class_colour(1).r);
}
