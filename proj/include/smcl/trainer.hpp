#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "smcl/augment.hpp"
#include "smcl/config.hpp"
#include "smcl/data.hpp"
#include "smcl/eval.hpp"
#include "smcl/losses.hpp"
#include "smcl/masking.hpp"
#include "smcl/model.hpp"
#include "smcl/rng.hpp"

namespace smcl {

// Named random streams split from the root seed. The model-init stream is
// consumed once by make_model and is not carried here.
struct TrainStreams {
  Rng data;     // epoch shuffling
  Rng augment;  // view augmentation
  Rng sampler;  // target draws
  Rng masking;  // mask area and random centres
  Rng gate;     // per-step masking gate

  static TrainStreams from_seed(std::uint64_t seed);
  nlohmann::json to_json() const;
  static TrainStreams from_json(const nlohmann::json& j);
};

// False before mask_start_epoch; afterwards one Bernoulli(p_mask) draw.
bool masking_gate(int epoch, const TrainConfig& cfg, Rng& rng);

// Learning rate in effect during `epoch` (0-based).
double learning_rate(const TrainConfig& cfg, int epoch);

// Ones before drw_start_epoch (or with DRW off), class-balanced weights after.
DrwWeights drw_for_epoch(const TrainConfig& cfg, const ClassHistogram& hist, int epoch);

// Whether `epoch` uses the five-view objective with target sampling.
bool smcl_phase(const TrainConfig& cfg, int epoch);

struct AssembledBatch {
  ViewBatch batch;
  std::int64_t masked_sources = 0;
  std::int64_t center_fallbacks = 0;
};

// Builds normalized view batches from uint8 training images.
class BatchAssembler {
 public:
  BatchAssembler(const LabeledImages& train, const TrainConfig& cfg, ChannelStats stats);

  // Two-view form when !with_targets. Otherwise five views per source; x_m
  // is a third augmented view of the source, masked when `gate` is on
  // (A = clipped mask area) and left whole with A = 0 when it is off.
  AssembledBatch assemble(std::span<const std::int64_t> sources, bool with_targets, bool gate,
                          TrainStreams& streams) const;

  const ChannelStats& stats() const { return stats_; }
  const MinorWeightedDistribution& distribution() const { return dist_; }
  const TargetSampler& sampler() const { return sampler_; }

 private:
  const LabeledImages& train_;
  ChannelStats stats_;
  std::vector<float> fill_;
  Augmenter augmenter_;
  MaskOptions mask_options_;
  MinorWeightedDistribution dist_;
  TargetSampler sampler_;
};

struct StepResult {
  LossBreakdown loss;
  bool gate = false;
  bool five_view = false;
  std::int64_t correct = 0;  // argmax of the first source view
  std::int64_t sources = 0;
  std::int64_t masked_sources = 0;
  std::int64_t anchors_without_positives = 0;
};

struct TrainOptions {
  std::filesystem::path run_dir;  // metrics.jsonl and checkpoint.smcl live here
  bool resume = false;
  const LabeledImages* test = nullptr;
  std::function<void(const nlohmann::json& epoch_row)> on_epoch;
};

struct TrainResult {
  SmclNet model{nullptr};
  ChannelStats stats;
  ClassHistogram train_histogram;
  int epochs_completed = 0;
  std::optional<EvalReport> final_eval;
  std::vector<nlohmann::json> epoch_rows;  // this invocation only
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  bool aborted = false;
  std::string abort_reason;
};

// One owner of the model, optimizer and streams. train() drives it; tests
// may call train_step() directly with chosen source indices.
class Trainer {
 public:
  Trainer(TrainConfig cfg, const LabeledImages& train);

  const TrainConfig& config() const { return cfg_; }
  SmclNet& model() { return model_; }
  TrainStreams& streams() { return streams_; }
  const BatchAssembler& assembler() const { return assembler_; }
  const ClassHistogram& histogram() const { return hist_; }
  torch::optim::SGD& optimizer() { return *optimizer_; }

  void set_learning_rate(double lr);

  // Shuffled source order for one epoch, from the data stream.
  std::vector<std::int64_t> epoch_order();

  // Forward, loss, backward and one optimizer update. Throws NonFiniteLoss
  // before touching the parameters.
  StepResult train_step(std::span<const std::int64_t> sources, int epoch);

  // Checkpoint with model, optimizer and stream state after `epochs_done`.
  void save(const std::filesystem::path& path, int epochs_done) const;
  // Restores from a checkpoint written by save(); returns epochs done.
  int restore(const std::filesystem::path& path);

 private:
  TrainConfig cfg_;
  const LabeledImages& train_;
  ClassHistogram hist_;
  SmclNet model_;
  TrainStreams streams_;
  BatchAssembler assembler_;
  std::unique_ptr<torch::optim::SGD> optimizer_;
};

// Full schedule. A non-finite loss stops training, keeps the last good
// checkpoint and returns with `aborted` set.
TrainResult train(const TrainConfig& cfg, const LabeledImages& train, const TrainOptions& options);

// Mean and stddev stored in a trainer checkpoint.
ChannelStats stats_from_checkpoint(const nlohmann::json& extra);

}  // namespace smcl
