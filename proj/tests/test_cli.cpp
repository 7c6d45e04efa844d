#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "contextseg/checkpoint.hpp"
#include "contextseg/cli.hpp"
#include "contextseg/trainer.hpp"
#include "doctest.h"

using namespace contextseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("contextseg_cli_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

RunConfig small_run(const fs::path& out) {
  RunConfig cfg;
  cfg.output = out;
  cfg.data.train_count = 6;
  cfg.data.val_count = 2;
  cfg.train.solver.max_iter = 6;
  cfg.train.eval_interval = 3;
  return cfg;
}

// A config with every section moved off its defaults.
RunConfig random_config(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto real = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  RunConfig c;
  c.net = NetSpec::toy({pick(1, 9), pick(1, 9), pick(1, 9)}, 2 * pick(0, 2) + 1);
  c.net.trunk.push_back(LayerSpec::conv(pick(1, 5), pick(1, 4), pick(1, 3), pick(0, 2)));
  c.net.head = static_cast<FusionMode>(pick(0, 2));
  c.net.classes = pick(2, 9);
  c.net.fusion_normalize = pick(0, 1);
  c.net.context_enabled = pick(0, 1);
  c.net.taps = {1, 3};
  c.net.tap_scales = {real(0, 200), 1.0 / 3.0};
  c.net.context_tap = pick(-1, 3);
  c.net.gamma_init = real(0.1, 30);
  c.train.solver.base_lr = real(1e-6, 1);
  c.train.solver.momentum = real(0, 0.99);
  c.train.solver.policy = pick(0, 1) ? LrPolicy::kPoly : LrPolicy::kStep;
  c.train.solver.power = real(0.1, 2);
  c.train.solver.max_iter = pick(1, 100000);
  c.train.solver.step_size = pick(0, 1000);
  c.train.solver.weight_decay = real(0, 1e-2);
  c.train.solver.seed = rng();
  c.train.batch_size = pick(1, 8);
  c.scene.noise = pick(0, 20);
  c.scene.cue_strength = real(0.1, 1);
  c.scene.seed = rng();
  c.data.val_count = pick(0, 100);
  c.probe.layer = pick(-1, 7);
  c.probe.probe.threshold_fraction = real(0, 1);
  c.probe.probe.noise_lo = -real(0, 1);
  c.probe.probe.seed = rng();
  c.probe.probe.crop_to_rf = pick(0, 1);
  c.gradcheck.widths = {pick(1, 8)};
  c.gradcheck.tol = real(1e-6, 1e-2);
  c.output = "runs/" + std::to_string(pick(0, 999));
  return c;
}

}  // namespace

TEST_CASE("default config round trips and names every section") {
  const RunConfig def;
  const std::string text = serialize_config(def);
  CHECK(parse_config(text) == def);
  CHECK(parse_config("") == def);
  for (const char* key : {"net.trunk = ", "train.base_lr = 0.01", "train.lr_policy = poly",
                          "train.batch_size = 2", "scene.train_count = 200",
                          "scene.val_count = 50", "probe.patch = 3", "output = out"})
    CHECK_MESSAGE(text.find(key) != std::string::npos, key);
  CHECK(def.net == NetSpec::toy_default());
  CHECK_NOTHROW(def.validate());
}

TEST_CASE("parse, serialize, parse is a fixed point on random configs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const RunConfig c = random_config(rng);
    const std::string once = serialize_config(c);
    const RunConfig back = parse_config(once);
    CHECK(back == c);
    CHECK(serialize_config(back) == once);
  }
}

TEST_CASE("config syntax") {
  const RunConfig c = parse_config(
      "# comment line\n"
      "  train.base_lr   =  0.5   # trailing comment\n"
      "\n"
      "net.taps = 1, 3 ,5\n"
      "net.tap_scales =\n"
      "net.head = late\n"
      "net.trunk = conv:4:3:1:1 relu conv:2:1:2:0\n");
  CHECK(c.train.solver.base_lr == 0.5);
  CHECK(c.net.taps == std::vector<int>{1, 3, 5});
  CHECK(c.net.tap_scales.empty());
  CHECK(c.net.head == FusionMode::kLate);
  REQUIRE(c.net.trunk.size() == 3);
  CHECK(c.net.trunk[2] == LayerSpec::conv(2, 1, 2, 0));
  CHECK(format_trunk(c.net.trunk) == "conv:4:3:1:1 relu conv:2:1:2:0");

  RunConfig o;
  apply_override(o, "train.max_iter=17");
  CHECK(o.train.solver.max_iter == 17);
}

TEST_CASE("config errors are hard") {
  CHECK_THROWS_AS(parse_config("train.learning_rate = 0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.base_lr = 0.1\ntrain.base_lr = 0.2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.base_lr 0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.base_lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.max_iter = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("net.normalize = yes\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("net.head = middle\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("net.trunk = pool:2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("output =\n"), ConfigError);
  RunConfig o;
  CHECK_THROWS_AS(apply_override(o, "nokey"), ConfigError);
  CHECK_THROWS_AS(apply_override(o, "train.nothing=1"), ConfigError);

  try {
    parse_config("\n\nscene.colour = red\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(e.code() == ExitCode::kMismatch);
  }

  RunConfig bad;
  bad.net.classes = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.train.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(parse_net("net.classes = 2\ntrain.seed = 3\n"), ConfigError);
}

TEST_CASE("checkpoint round trip and layout") {
  TempDir tmp("ckpt");
  NetSpec spec = NetSpec::toy({3, 4});
  spec.head = FusionMode::kLate;
  spec.classes = 3;
  auto net = Network<float>::build(spec, 9);
  net.params().front()->value[0] = -0.0f;
  net.params().back()->value[0] = 1e-38f;
  const fs::path path = tmp.path / "a.ckpt";
  save_checkpoint(path, net);

  auto back = load_checkpoint(path);
  CHECK(back.spec() == spec);
  auto a = net.params();
  auto b = back.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(a[i]->value.shape() == b[i]->value.shape());
    CHECK(std::memcmp(a[i]->value.data().data(), b[i]->value.data().data(),
                      a[i]->value.count() * sizeof(float)) == 0);
  }

  // Header, then the exact record sizes.
  const std::string bytes = slurp(path);
  CHECK(bytes.substr(0, 8) == "CTXSEGCK");
  CHECK(bytes[8] == 1);
  const std::string net_text = serialize_net(spec);
  std::size_t expected = 8 + 4 + 4 + net_text.size() + 4;
  for (const auto* p : a) expected += 4 + p->name.size() + 16 + 4 * p->value.count();
  CHECK(bytes.size() == expected);
  CHECK(bytes.substr(16, net_text.size()) == net_text);

  // Saving the reloaded net reproduces the file byte for byte.
  save_checkpoint(tmp.path / "b.ckpt", back);
  CHECK(slurp(tmp.path / "b.ckpt") == bytes);
}

TEST_CASE("malformed checkpoints are rejected") {
  TempDir tmp("badckpt");
  auto net = Network<float>::build(NetSpec::toy({2}), 1);
  save_checkpoint(tmp.path / "ok.ckpt", net);
  const std::string bytes = slurp(tmp.path / "ok.ckpt");
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(tmp.path / name, std::ios::binary) << content;
    return tmp.path / name;
  };
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "missing.ckpt"), IoError);
  CHECK_THROWS_AS(load_checkpoint(write("t.ckpt", bytes.substr(0, bytes.size() - 3))), IoError);
  CHECK_THROWS_AS(load_checkpoint(write("x.ckpt", bytes + "z")), IoError);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(load_checkpoint(write("m.ckpt", magic)), IoError);
  std::string version = bytes;
  version[8] = 7;
  CHECK_THROWS_AS(load_checkpoint(write("v.ckpt", version)), IoError);

  // A header that promises a different architecture than the records hold.
  NetSpec wider = NetSpec::toy({3});
  const std::string a = serialize_net(net.spec()), b = serialize_net(wider);
  std::string swapped = bytes;
  REQUIRE(a.size() == b.size());
  swapped.replace(16, a.size(), b);
  CHECK_THROWS_AS(load_checkpoint(write("s.ckpt", swapped)), ShapeError);
}

TEST_CASE("gen writes the split and is deterministic") {
  TempDir tmp("gen");
  RunConfig cfg = small_run(tmp.path / "run");
  std::ostringstream out;
  cmd_gen(cfg, out);
  CHECK(out.str() == (dataset_dir(cfg, "train") / "manifest.csv").string() + "\n" +
                         (dataset_dir(cfg, "val") / "manifest.csv").string() + "\n");
  const auto train = read_dataset(dataset_dir(cfg, "train"));
  const auto val = read_dataset(dataset_dir(cfg, "val"));
  REQUIRE(train.size() == 6);
  REQUIRE(val.size() == 2);
  CHECK(train.front().index == 0);
  CHECK(val.front().index == 6);
  CHECK(val.back().index == 7);

  const std::string manifest = slurp(dataset_dir(cfg, "val") / "manifest.csv");
  const std::string image = slurp(dataset_dir(cfg, "val") / "images" / "00007.ppm");
  cmd_gen(cfg, out);
  CHECK(slurp(dataset_dir(cfg, "val") / "manifest.csv") == manifest);
  CHECK(slurp(dataset_dir(cfg, "val") / "images" / "00007.ppm") == image);
}

TEST_CASE("gen defaults to 200 train and 50 val images") {
  const RunConfig def;
  CHECK(def.data.train_count == 200);
  CHECK(def.data.val_count == 50);
}

TEST_CASE("gen with zero samples writes empty manifests") {
  TempDir tmp("gen0");
  RunConfig cfg = small_run(tmp.path / "run");
  cfg.data.train_count = 0;
  cfg.data.val_count = 0;
  std::ostringstream out, err;
  CHECK(run_command([&] { cmd_gen(cfg, out); }, err) == 0);
  CHECK(slurp(dataset_dir(cfg, "train") / "manifest.csv") == "index,image,label,cue\n");
  CHECK(read_dataset(dataset_dir(cfg, "val")).empty());
}

TEST_CASE("gen into an unwritable place exits with the i/o code") {
  TempDir tmp("genbad");
  std::ofstream(tmp.path / "file") << "x";
  RunConfig cfg = small_run(tmp.path / "file" / "below");
  std::ostringstream out, err;
  CHECK(run_command([&] { cmd_gen(cfg, out); }, err) == 2);
  CHECK(err.str().find("error:") == 0);
}

TEST_CASE("train writes log and checkpoints; eval scores them") {
  TempDir tmp("train");
  RunConfig cfg = small_run(tmp.path / "run");
  std::ostringstream out, err;
  REQUIRE(run_command([&] { cmd_gen(cfg, out); }, err) == 0);
  REQUIRE(run_command([&] { cmd_train(cfg, out); }, err) == 0);

  const fs::path dir = train_dir(cfg);
  std::istringstream log(slurp(dir / "log.csv"));
  std::string line;
  std::getline(log, line);
  CHECK(line == kTrainLogHeader);
  int rows = 0, evals = 0;
  while (std::getline(log, line)) {
    ++rows;
    CHECK(line.starts_with(std::to_string(rows) + ","));
    evals += line.back() != ',';
  }
  CHECK(rows == 6);
  CHECK(evals == 2);
  CHECK(parse_config(slurp(dir / "config.txt")) == cfg);
  CHECK(load_checkpoint(dir / "final.ckpt").spec() == cfg.net);

  REQUIRE(run_command([&] { cmd_eval(cfg, dir / "best.ckpt", "val", out); }, err) == 0);
  const fs::path ev = cfg.output / "eval" / "val";
  std::istringstream metrics(slurp(ev / "metrics.csv"));
  std::getline(metrics, line);
  CHECK(line == "pixel_acc,mean_acc,mean_iu,fw_iu");
  std::getline(metrics, line);
  CHECK(std::count(line.begin(), line.end(), ',') == 3);
  CHECK(fs::exists(ev / "per_image.csv"));
  const RgbImage pred = read_ppm(ev / "predictions" / "00006.ppm");
  CHECK(pred.height == cfg.scene.image_size);
}

TEST_CASE("train without a dataset is an i/o failure") {
  TempDir tmp("nodata");
  RunConfig cfg = small_run(tmp.path / "run");
  std::ostringstream out, err;
  CHECK(run_command([&] { cmd_train(cfg, out); }, err) == 2);
}

TEST_CASE("non-finite loss exits 3 naming the iteration") {
  TempDir tmp("diverge");
  RunConfig cfg = small_run(tmp.path / "run");
  cfg.train.solver.base_lr = 1e8;
  cfg.train.solver.max_iter = 50;
  std::ostringstream out, err;
  REQUIRE(run_command([&] { cmd_gen(cfg, out); }, err) == 0);
  CHECK(run_command([&] { cmd_train(cfg, out); }, err) == 3);
  CHECK(err.str().find("iteration ") != std::string::npos);
}

TEST_CASE("eval with a class-count mismatch exits 4") {
  TempDir tmp("mismatch");
  RunConfig cfg = small_run(tmp.path / "run");
  std::ostringstream out, err;
  REQUIRE(run_command([&] { cmd_gen(cfg, out); }, err) == 0);
  NetSpec spec = cfg.net;
  spec.classes = 3;
  save_checkpoint(tmp.path / "three.ckpt", Network<float>::build(spec, 1));
  CHECK(run_command([&] { cmd_eval(cfg, tmp.path / "three.ckpt", "val", out); }, err) == 4);
}

TEST_CASE("evaluation aggregate is the sum of per-image matrices, for any thread count") {
  const SceneSpec scene;
  const auto samples = generate(scene, 5, 40);
  auto net = Network<float>::build(NetSpec::toy_default(), 4);
  const Evaluation one = evaluate(net, samples, 1, true);
  const Evaluation three = evaluate(net, samples, 3, true);
  ConfusionMatrix sum(scene.num_classes());
  for (const auto& cm : one.per_image) sum += cm;
  CHECK(one.total == sum);
  CHECK(three.total == one.total);
  CHECK(three.predictions == one.predictions);
}

TEST_CASE("ground truth scored against itself gives perfect metrics") {
  const SceneSpec scene;
  ConfusionMatrix cm(scene.num_classes());
  for (const auto& s : generate(scene, 4, 10)) accumulate_confusion(s.labels, s.labels, kIgnoreLabel, cm);
  const SegMetrics m = metrics(cm);
  CHECK(m.pixel_acc == 1.0);
  CHECK(m.mean_acc == 1.0);
  CHECK(m.mean_iu == 1.0);
  CHECK(m.fw_iu == 1.0);
}

TEST_CASE("gradcheck command passes on the toy nets") {
  RunConfig cfg;
  cfg.gradcheck.seeds = 2;
  std::ostringstream out, err;
  CHECK(run_command([&] { cmd_gradcheck(cfg, out); }, err) == 0);
  CHECK(out.str().find("6/6 nets pass") != std::string::npos);

  cfg.gradcheck.tol = 1e-15;
  cfg.gradcheck.seeds = 1;
  CHECK(run_command([&] { cmd_gradcheck(cfg, out); }, err) == 3);
}

TEST_CASE("probe writes files matching the sensitivity grid") {
  TempDir tmp("probe");
  RunConfig cfg;
  cfg.output = tmp.path / "run";
  cfg.probe.image_size = 24;
  cfg.scene.max_shape_extent = 12;
  cfg.probe.probe.stride = 2;
  std::ostringstream out, err;
  REQUIRE(run_command([&] { cmd_probe(cfg, std::nullopt, out); }, err) == 0);
  const fs::path dir = cfg.output / "probe";
  const GrayImage pgm = read_pgm(dir / "sensitivity.pgm");
  const int grid = probe_grid_extent(24, cfg.probe.probe.patch, cfg.probe.probe.stride);
  CHECK(pgm.height == grid);
  CHECK(pgm.width == grid);

  std::istringstream boxes(slurp(dir / "rf_boxes.csv"));
  std::string line;
  std::getline(boxes, line);
  CHECK(line == rf_box_csv_header());
  std::getline(boxes, line);
  CHECK(line.starts_with("theoretical,0,"));
  std::getline(boxes, line);
  CHECK(line.starts_with("empirical,"));

  std::istringstream summary(slurp(dir / "summary.csv"));
  std::getline(summary, line);
  CHECK(line == kProbeSummaryHeader);
  std::getline(summary, line);
  std::vector<std::string> cells;
  std::stringstream cs(line);
  for (std::string cell; std::getline(cs, cell, ',');) cells.push_back(cell);
  REQUIRE(cells.size() == 7);
  CHECK(cells[0] == "7");
  CHECK(std::stol(cells[4]) == 81);
  CHECK(std::stol(cells[5]) <= std::stol(cells[4]));
  CHECK(std::stod(cells[6]) <= 1.0);
}

TEST_CASE("probe with an invalid layer exits 4") {
  TempDir tmp("probebad");
  RunConfig cfg;
  cfg.output = tmp.path / "run";
  std::ostringstream out, err;
  for (int layer : {8, 100, -2}) {
    cfg.probe.layer = layer;
    CHECK(run_command([&] { cmd_probe(cfg, std::nullopt, out); }, err) == 4);
  }
  cfg.probe.layer = -1;
  cfg.probe.channel = 32;
  CHECK(run_command([&] { cmd_probe(cfg, std::nullopt, out); }, err) == 4);
}
