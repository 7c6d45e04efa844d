// contextseg: data generation, training, evaluation, gradient checks and
// receptive-field probes for global-context segmentation nets.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "contextseg/cli.hpp"

namespace {

using namespace contextseg;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output;
  std::optional<bool> context;
  std::optional<bool> normalize;
  std::string fuse_layers;
  std::string head;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "config file (key = value lines)");
  cmd->add_option("-s,--set", o.overrides, "override one key, e.g. --set train.max_iter=500");
  cmd->add_option("-o,--output", o.output, "output directory (config key `output`)");
  cmd->add_flag_function(
      "--context,!--no-context", [&o](std::int64_t n) { o.context = n > 0; },
      "enable or disable the global context branch");
  cmd->add_flag_function(
      "--normalize,!--no-normalize", [&o](std::int64_t n) { o.normalize = n > 0; },
      "L2-normalize and scale each fused branch");
  cmd->add_option("--fuse-layers", o.fuse_layers,
                  "local branches: `last` or `all` (every conv block output)")
      ->check(CLI::IsMember({"last", "all"}));
  cmd->add_option("--head", o.head, "fusion head: none, early or late")
      ->check(CLI::IsMember({"none", "early", "late"}));
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig config = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  for (const auto& kv : o.overrides) apply_override(config, kv);
  if (!o.output.empty()) config.output = o.output;
  if (o.context) config.net.context_enabled = *o.context;
  if (o.normalize) config.net.fusion_normalize = *o.normalize;
  if (!o.head.empty()) config.net.head = parse_fusion_mode(o.head);
  if (o.fuse_layers == "all") config.net.taps = config.net.block_outputs();
  if (o.fuse_layers == "last") config.net.taps.clear();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextseg: global-context segmentation toolkit"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::string checkpoint;
  std::string split = "val";

  auto* gen = app.add_subcommand("gen", "write the train and val datasets");
  auto* train = app.add_subcommand("train", "train a net, write log.csv and checkpoints");
  auto* eval = app.add_subcommand("eval", "score a checkpoint, write metrics and predictions");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every fusion mode");
  auto* probe = app.add_subcommand("probe", "theoretical and empirical receptive field of a unit");
  auto* config = app.add_subcommand("config", "print the resolved config");
  for (auto* cmd : {gen, train, eval, gradcheck, probe, config}) add_common(cmd, opts);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--split", split, "dataset split under <output>/data")
      ->check(CLI::IsMember({"train", "val"}));
  probe->add_option("--checkpoint", checkpoint, "checkpoint file (default: fresh init)");

  CLI11_PARSE(app, argc, argv);

  return run_command(
      [&] {
        const RunConfig cfg = resolve(opts);
        if (gen->parsed()) cmd_gen(cfg, std::cout);
        if (train->parsed()) cmd_train(cfg, std::cout);
        if (eval->parsed()) cmd_eval(cfg, checkpoint, split, std::cout);
        if (gradcheck->parsed()) cmd_gradcheck(cfg, std::cout);
        if (probe->parsed())
          cmd_probe(cfg, checkpoint.empty() ? std::nullopt : std::optional<std::filesystem::path>(checkpoint),
                    std::cout);
        if (config->parsed()) {
          cfg.validate();
          std::cout << serialize_config(cfg);
        }
      },
      std::cerr);
}
