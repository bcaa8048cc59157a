#pragma once

// Training and evaluation runs driven by a RunConfig: corpus -> windows ->
// train/valid split -> MLM or causal LM batches -> Adam -> metrics CSV and a
// final checkpoint.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "tcoder/config.hpp"
#include "tcoder/data.hpp"
#include "tcoder/model.hpp"

namespace tcoder {

struct MetricRow {
  Index step = 0;
  std::string split;  // "train" or "valid"
  double nll = 0.0;
};

struct RunOptions {
  std::filesystem::path ckpt_dir;      // empty: no checkpoint
  std::filesystem::path metrics_path;  // empty: no CSV
  std::optional<std::uint64_t> seed;   // overrides the config seed
  std::ostream* log = nullptr;
};

struct TrainSummary {
  std::vector<MetricRow> metrics;
  double final_train_nll = 0.0;  // mean over the last logging interval
  double final_valid_nll = 0.0;
  Index vocab_size = 0;
  Index parameters = 0;
  double seconds = 0.0;
  std::filesystem::path checkpoint;
};

/// Turns windows into training examples. MLM masks each window with `rng`;
/// the causal LM predicts ids 1..n-1 from ids 0..n-2. Trailing padding is
/// dropped in both cases.
std::vector<TrainExample> make_examples(const std::vector<std::vector<int>>& windows, Task task, Index vocab_size,
                                        Rng& rng, const MaskingConfig& masking);

/// The fixed validation examples: masking uses a stream derived from the
/// seed alone, so every evaluation sees the same positions.
std::vector<TrainExample> validation_examples(const Split& split, const RunConfig& cfg, Index vocab_size);

TrainSummary run_training(RunConfig cfg, const RunOptions& opt = {});

struct EvalSummary {
  double nll = 0.0;
  Index scored = 0;
};

/// Reloads a checkpoint written by run_training and scores its validation
/// split (or `corpus` when given) with the stored vocabulary.
EvalSummary run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& corpus = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

}  // namespace tcoder
