#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

#include "contextseg/config.hpp"

namespace contextseg {

// Output layout under config.output:
//   data/{train,val}/            datasets (segdata layout)
//   train/config.txt, log.csv, best.ckpt, final.ckpt
//   eval/<split>/metrics.csv, per_image.csv, predictions/NNNNN.ppm
//   probe/sensitivity.pgm, sensitivity.csv, rf_boxes.csv, summary.csv
std::filesystem::path dataset_dir(const RunConfig& config, const std::string& split);
std::filesystem::path train_dir(const RunConfig& config);

inline constexpr const char* kTrainLogHeader = "iter,lr,loss,val_mean_iu";
inline constexpr const char* kProbeSummaryHeader =
    "layer,channel,row,col,theoretical_area,empirical_area,coverage";

// Each command throws contextseg::Error (or a filesystem error) on failure.
// Train indices are [0, train_count), val indices follow them.
void cmd_gen(const RunConfig& config, std::ostream& out);
void cmd_train(const RunConfig& config, std::ostream& out);
void cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
              const std::string& split, std::ostream& out);
// NumericalError unless every net passes.
void cmd_gradcheck(const RunConfig& config, std::ostream& out);
// Without a checkpoint the net is freshly initialised from train.seed.
void cmd_probe(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint,
               std::ostream& out);

// Runs fn and maps failures onto exit codes: Error::code(), 2 for filesystem
// errors, 1 for anything else. The message goes to err.
int run_command(const std::function<void()>& fn, std::ostream& err);

// Worker threads for evaluation and probing; at least 1.
int cli_threads();

}  // namespace contextseg
