#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "contextseg/graph.hpp"
#include "contextseg/optim.hpp"
#include "contextseg/rfprobe.hpp"
#include "contextseg/segdata.hpp"

namespace contextseg {

struct DataSettings {
  int train_count = 200;
  int val_count = 50;
  bool operator==(const DataSettings&) const = default;
};

struct TrainSettings {
  TrainConfig solver;
  int batch_size = 2;
  // Validation mean IU is computed every eval_interval iterations and at the end.
  int eval_interval = 200;
  bool operator==(const TrainSettings&) const = default;
};

// Unit and image for `probe`. layer -1 is the last trunk layer; negative
// row/col pick the centre unit.
struct ProbeSettings {
  int layer = -1;
  int channel = 0;
  int row = -1;
  int col = -1;
  int image_size = 64;
  int image_index = 0;
  ProbeConfig probe;
  bool operator==(const ProbeSettings&) const = default;
};

// Toy nets used by `gradcheck`, one per fusion mode.
struct GradcheckSettings {
  std::vector<int> widths{6, 6};
  int classes = 2;
  int image_size = 8;
  int batch = 2;
  int seeds = 10;
  double step = 1e-3;
  double tol = 1e-3;
  bool operator==(const GradcheckSettings&) const = default;
};

struct RunConfig {
  NetSpec net = NetSpec::toy_default();
  TrainSettings train;
  SceneSpec scene;
  DataSettings data;
  ProbeSettings probe;
  GradcheckSettings gradcheck;
  std::filesystem::path output = "out";

  // Cross-section checks on top of each part's own validate(). ConfigError.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// One `key = value` per line, `#` starts a comment, keys are dotted
// (`train.base_lr`). Keys not given keep their defaults. Unknown or repeated
// keys and unparsable values are ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Every key, in a fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& config);
// Applies one `key=value` override.
void apply_override(RunConfig& config, const std::string& assignment);
std::vector<std::string> config_keys();

// The net.* lines alone, as embedded in checkpoints. parse_net rejects keys
// from other sections.
std::string serialize_net(const NetSpec& net);
NetSpec parse_net(const std::string& text);

// Shortest text that parses back to the same double.
std::string format_double(double v);

// `conv:OUT:K:S:P` and `relu` tokens separated by spaces.
std::string format_trunk(const std::vector<LayerSpec>& trunk);
std::vector<LayerSpec> parse_trunk(const std::string& text);

}  // namespace contextseg
