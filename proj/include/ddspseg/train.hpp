#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ddspseg/losses.hpp"
#include "ddspseg/metrics.hpp"
#include "ddspseg/network.hpp"
#include "ddspseg/optim.hpp"
#include "ddspseg/synth.hpp"

namespace ddspseg::train {

struct TrainConfig {
  nn::NetConfig net;
  loss::Kind loss = loss::Kind::dsc;
  synth::SynthSpec data;
  SgdConfig sgd;
  int iterations = 2000;
  int batch = 2;
  bool augment = true;
  std::uint64_t seed = 0;
  /// Held-out cases are generated from val_seed, independent of the run seed,
  /// so runs with different seeds validate on the same set.
  int val_cases = 8;
  int val_every = 250;
  std::uint64_t val_seed = 1000003;
  double threshold = 0.5;

  /// Throws std::invalid_argument on any invalid field.
  void validate() const;
};

struct LogRow {
  int iter = 0;
  double loss_main = 0.0;
  double loss_stage2 = 0.0;
  double loss_stage3 = 0.0;
  double loss_total = 0.0;
  double lr = 0.0;
};

struct ValRow {
  int iter = 0;
  double dice = 0.0;
};

struct TrainResult {
  std::vector<LogRow> log;
  std::vector<ValRow> validation;
  /// Mean validation Dice after the last iteration (fused heads, eval mode).
  double final_val_dice = 0.0;
  std::vector<std::uint8_t> checkpoint;
  /// Set when a non-finite loss or gradient stopped the run.
  std::optional<int> aborted_at;
  std::string abort_reason;
};

/// Training case for (seed, iteration, batch slot): a fresh synthetic case,
/// deformed when cfg.augment is set.
synth::Case training_case(const TrainConfig& cfg, int iteration, int slot);
/// The i-th held-out validation case (never deformed).
synth::Case validation_case(const TrainConfig& cfg, int i);

/// Batch of images as an (N, 1, X, Y, Z) tensor.
nn::Tensor5<float> stack_images(const std::vector<synth::Case>& cases);

/// Fused eval-mode probability maps thresholded at cfg.threshold.
std::vector<BinaryMask> predict_masks(nn::Network<float>& net, const std::vector<synth::Case>& cases,
                                      const TrainConfig& cfg);

/// Per-sample losses for one head averaged over the batch; the gradient is
/// dL/dp scaled by 1/batch.
struct HeadLoss {
  double value = 0.0;
  nn::Tensor5<float> grad;
};
HeadLoss batch_loss(loss::Kind kind, const nn::Tensor5<float>& probs, const std::vector<synth::Case>& cases);

using ProgressFn = std::function<void(const LogRow&)>;

/// Deterministic per (cfg, seed): initializes the network from cfg.seed,
/// runs cfg.iterations SGD steps on fresh cases, validates every
/// cfg.val_every iterations and after the last one.
TrainResult train_run(const TrainConfig& cfg, const ProgressFn& progress = {});

/// Like train_run, but also hands back the trained network.
TrainResult train_run(const TrainConfig& cfg, nn::Network<float>& net, const ProgressFn& progress = {});

std::string log_csv(const std::vector<LogRow>& rows);
std::string validation_csv(const std::vector<ValRow>& rows);

// ------------------------------------------------------------- ablation

enum class AblationTable { table2, table3, table4, table5, table6 };

const char* to_string(AblationTable t);
AblationTable parse_table(std::string_view s);

struct AblationConfig {
  std::string label;  // row label within the table, e.g. "ddsp/dsc"
  TrainConfig train;
};

struct AblationPlan {
  AblationTable table = AblationTable::table2;
  std::vector<AblationConfig> configs;
  std::vector<std::uint64_t> seeds{0};
};

/// The experiment grid of one table, built from a base configuration:
/// table2 = {none, ddsp, aspp} blocks x {wce, dsc, jaccard} losses;
/// table3 = DDSP rate sets; table4 = long connections; table5 = supervision
/// weights; table6 = fusion masks.
AblationPlan make_plan(AblationTable table, const TrainConfig& base, std::vector<std::uint64_t> seeds);

struct AblationRow {
  std::string table;
  std::string label;
  std::string loss, block, dilation_rates, pooling_rates, long_connection, supervision, fusion;
  std::uint64_t seed = 0;
  int iterations = 0;
  std::string status = "ok";  // "ok" or "failed: <reason>"
  double val_dice = 0.0;
  double dsc = 0.0;
  std::optional<double> arvd_pct, abd_mm, hd95_mm;
};

/// Runs every (config, seed) pair; `jobs` > 1 runs independent trainings on
/// worker threads. Rows come back in plan order whatever the worker count.
std::vector<AblationRow> run_ablation(const AblationPlan& plan, int jobs = 1);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace ddspseg::train
