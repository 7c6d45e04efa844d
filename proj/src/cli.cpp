#include "contextseg/cli.hpp"

#include <fstream>
#include <random>

#include "contextseg/checkpoint.hpp"
#include "contextseg/parallel.hpp"
#include "contextseg/trainer.hpp"

namespace contextseg {
namespace {

namespace fs = std::filesystem;

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void close_out(std::ofstream& f, const fs::path& path) {
  f.close();
  if (!f) throw IoError("write failed for " + path.string());
}

std::string metrics_row(const SegMetrics& m) {
  return format_double(m.pixel_acc) + ',' + format_double(m.mean_acc) + ',' +
         format_double(m.mean_iu) + ',' + format_double(m.fw_iu);
}

std::vector<Sample> load_split(const RunConfig& config, const std::string& split) {
  const fs::path dir = dataset_dir(config, split);
  if (!fs::exists(dir / "manifest.csv"))
    throw IoError("no dataset at " + dir.string() + " (run gen first)");
  return read_dataset(dir);
}

// Every scored label must be a class of the network.
void check_labels(const std::vector<Sample>& samples, int classes, const std::string& what) {
  for (const auto& s : samples)
    for (int v : s.labels.data)
      if (v != kIgnoreLabel && (v < 0 || v >= classes))
        throw DataError(what + " sample " + std::to_string(s.index) + " has label " +
                        std::to_string(v) + " but the network has " + std::to_string(classes) +
                        " classes");
}

}  // namespace

fs::path dataset_dir(const RunConfig& config, const std::string& split) {
  return config.output / "data" / split;
}

fs::path train_dir(const RunConfig& config) { return config.output / "train"; }

int cli_threads() { return std::max(1, worker_threads()); }

void cmd_gen(const RunConfig& config, std::ostream& out) {
  config.validate();
  const int n_train = config.data.train_count;
  const int n_val = config.data.val_count;
  for (const auto& [split, first, count] :
       {std::tuple{std::string("train"), 0, n_train}, std::tuple{std::string("val"), n_train, n_val}}) {
    const fs::path dir = dataset_dir(config, split);
    write_dataset(dir, generate(config.scene, count, first));
    out << (dir / "manifest.csv").string() << '\n';
  }
}

void cmd_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  const auto train = load_split(config, "train");
  const auto val = load_split(config, "val");
  check_labels(train, config.net.classes, "train");
  check_labels(val, config.net.classes, "val");

  const fs::path dir = train_dir(config);
  make_dirs(dir);
  {
    auto f = open_out(dir / "config.txt");
    f << serialize_config(config);
    close_out(f, dir / "config.txt");
  }
  const fs::path log_path = dir / "log.csv";
  auto log = open_out(log_path);
  log << kTrainLogHeader << '\n';
  auto outcome = train_network(config, train, val, cli_threads(), [&](const TrainLogRow& r) {
    log << r.iter << ',' << format_double(r.lr) << ',' << format_double(r.loss) << ',';
    if (r.val_mean_iu) log << format_double(*r.val_mean_iu);
    log << '\n';
    log.flush();
  });
  close_out(log, log_path);
  save_checkpoint(dir / "final.ckpt", *outcome.final_net);
  save_checkpoint(dir / "best.ckpt", *outcome.best_net);

  const auto& first = outcome.log.front();
  const auto& last = outcome.log.back();
  out << "iterations " << last.iter << ", loss " << format_double(first.loss) << " -> "
      << format_double(last.loss) << '\n';
  if (outcome.final_val_mean_iu)
    out << "val mean_iu final " << format_double(*outcome.final_val_mean_iu) << ", best "
        << format_double(outcome.best_val_mean_iu) << " at iter " << outcome.best_iter << '\n';
  out << (dir / "final.ckpt").string() << '\n' << (dir / "best.ckpt").string() << '\n';
}

void cmd_eval(const RunConfig& config, const fs::path& checkpoint, const std::string& split,
              std::ostream& out) {
  auto net = load_checkpoint(checkpoint);
  const auto samples = load_split(config, split);
  const int classes = net.spec().classes;
  if (classes != config.scene.num_classes())
    throw DataError("checkpoint has " + std::to_string(classes) + " classes, dataset scene has " +
                    std::to_string(config.scene.num_classes()));
  check_labels(samples, classes, split);
  if (samples.empty()) throw DataError("dataset " + split + " is empty");

  const Evaluation ev = evaluate(net, samples, cli_threads(), true);
  const fs::path dir = config.output / "eval" / split;
  make_dirs(dir / "predictions");

  const SegMetrics total = metrics(ev.total);
  {
    auto f = open_out(dir / "metrics.csv");
    f << kMetricsHeader << '\n' << metrics_row(total) << '\n';
    close_out(f, dir / "metrics.csv");
  }
  {
    auto f = open_out(dir / "per_image.csv");
    f << "index," << kMetricsHeader << '\n';
    for (std::size_t i = 0; i < samples.size(); ++i)
      f << samples[i].index << ',' << metrics_row(metrics(ev.per_image[i])) << '\n';
    close_out(f, dir / "per_image.csv");
  }
  for (std::size_t i = 0; i < samples.size(); ++i)
    write_ppm(dir / "predictions" / (sample_stem(samples[i].index) + ".ppm"),
              colourize(ev.predictions[i]));

  out << kMetricsHeader << '\n' << metrics_row(total) << '\n';
  out << (dir / "metrics.csv").string() << '\n';
}

void cmd_gradcheck(const RunConfig& config, std::ostream& out) {
  config.validate();
  const GradcheckSettings& g = config.gradcheck;
  int failed = 0, total = 0;
  for (FusionMode mode : {FusionMode::kNone, FusionMode::kEarly, FusionMode::kLate}) {
    NetSpec spec = NetSpec::toy(g.widths);
    spec.head = mode;
    spec.classes = g.classes;
    for (int seed = 0; seed < g.seeds; ++seed) {
      auto net = Network<float>::build(spec, static_cast<std::uint64_t>(seed)).cast<double>();
      std::mt19937_64 rng(0x9c0ffeeULL + static_cast<std::uint64_t>(seed));
      std::uniform_real_distribution<double> value(-0.5, 0.5);
      Tensor<double> x(Shape{g.batch, spec.in_channels, g.image_size, g.image_size});
      for (double& v : x.data()) v = value(rng);
      std::uniform_int_distribution<int> cls(0, g.classes - 1);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      LabelMap labels(g.batch, g.image_size, g.image_size);
      for (int& v : labels.data) v = u(rng) < 0.1 ? kIgnoreLabel : cls(rng);

      GradCheckOptions opt;
      opt.step = g.step;
      opt.tol = g.tol;
      opt.ignore_label = kIgnoreLabel;
      opt.seed = static_cast<std::uint64_t>(seed);
      const auto report = grad_check(net, x, labels, opt);
      ++total;
      out << to_string(mode) << " seed " << seed << " params " << net.num_parameters() << ": "
          << (report.pass ? "pass" : "FAIL") << " max_rel_error "
          << format_double(report.max_rel_error()) << '\n';
      if (!report.pass) {
        ++failed;
        out << report.str() << '\n';
      }
    }
  }
  out << (total - failed) << "/" << total << " nets pass\n";
  if (failed) throw NumericalError(std::to_string(failed) + " of " + std::to_string(total) +
                                   " gradient checks failed");
}

void cmd_probe(const RunConfig& config, const std::optional<fs::path>& checkpoint,
               std::ostream& out) {
  config.validate();
  auto net = checkpoint ? load_checkpoint(*checkpoint)
                        : Network<float>::build(config.net, config.train.solver.seed);
  const NetSpec& spec = net.spec();
  const ProbeSettings& ps = config.probe;

  const int layer = ps.layer == -1 ? spec.last_layer() : ps.layer;
  if (layer < 0 || layer > spec.last_layer())
    throw ArgumentError("probe.layer " + std::to_string(layer) + " outside trunk of " +
                        std::to_string(spec.trunk.size()) + " layers");
  if (ps.channel < 0 || ps.channel >= spec.layer_channels(layer))
    throw ArgumentError("probe.channel " + std::to_string(ps.channel) + " outside layer " +
                        std::to_string(layer));

  SceneSpec scene = config.scene;
  scene.image_size = ps.image_size;
  const Sample sample = generate_sample(scene, ps.image_index);
  const auto [lh, lw] = layer_extent(spec, layer, ps.image_size, ps.image_size);
  ProbeUnit unit{layer, ps.channel, ps.row < 0 ? lh / 2 : ps.row, ps.col < 0 ? lw / 2 : ps.col};

  const RFBox theo = theoretical_rf(spec, layer, unit.row, unit.col, ps.image_size, ps.image_size);
  ProbeConfig pc = ps.probe;
  pc.threads = cli_threads();
  const SensitivityMap map = empirical_rf(net, image_to_tensor(sample.image), unit, pc);
  const RFBox emp = empirical_box(map, pc.threshold_fraction);
  const double ratio = coverage_ratio(emp, theo);

  const fs::path dir = config.output / "probe";
  make_dirs(dir);
  write_sensitivity_pgm(dir / "sensitivity.pgm", map);
  write_sensitivity_csv(dir / "sensitivity.csv", map);
  {
    auto f = open_out(dir / "rf_boxes.csv");
    f << rf_box_csv_header() << '\n' << rf_box_csv_row(theo) << '\n' << rf_box_csv_row(emp) << '\n';
    close_out(f, dir / "rf_boxes.csv");
  }
  const std::string summary = std::to_string(unit.layer) + ',' + std::to_string(unit.channel) +
                              ',' + std::to_string(unit.row) + ',' + std::to_string(unit.col) +
                              ',' + std::to_string(theo.area()) + ',' +
                              std::to_string(emp.area()) + ',' + format_double(ratio);
  {
    auto f = open_out(dir / "summary.csv");
    f << kProbeSummaryHeader << '\n' << summary << '\n';
    close_out(f, dir / "summary.csv");
  }
  out << kProbeSummaryHeader << '\n' << summary << '\n';
  out << rf_box_csv_header() << '\n' << rf_box_csv_row(theo) << '\n' << rf_box_csv_row(emp) << '\n';
}

int run_command(const std::function<void()>& fn, std::ostream& err) {
  try {
    fn();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kIo);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace contextseg
