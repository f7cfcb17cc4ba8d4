#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hydravit/config.hpp"
#include "hydravit/data.hpp"
#include "hydravit/evaluation.hpp"
#include "hydravit/model.hpp"

namespace hydravit {

struct EpochMetrics {
  int epoch = 0;  // 1-based
  LossBreakdown loss;
  double alpha = 0.0;
  double beta = 0.0;
  double w_min = 0.0;
  double w_max = 0.0;
  double val_auc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainState {
  HydraModel model;
  HydraModel adam_m;
  HydraModel adam_v;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  Rng rng;
  std::vector<EpochMetrics> history;
  double best_val_auc = -std::numeric_limits<double>::infinity();
};

/// Builds the model from config.seed and zeroes the optimizer moments. The shuffling
/// stream is seeded separately so that it does not depend on the parameter count.
TrainState init_train_state(const ModelConfig& model, const TrainConfig& train, const ClassCounts* counts = nullptr,
                            const WeightBundle* spatial_weights = nullptr);

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One optimizer step on the batch-mean composite loss. Returns the pre-update loss.
LossBreakdown train_step(TrainState& state, const TrainConfig& config, std::span<const Example* const> batch);
LossBreakdown train_step(TrainState& state, const TrainConfig& config, const Dataset& batch);

struct TrainHooks {
  const Dataset* validation = nullptr;
  std::vector<std::string> class_names;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::filesystem::path metrics_csv;     // empty: no metrics file
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Runs epochs state.epoch + 1 .. config.epochs with seeded per-epoch shuffling.
/// Checkpoints go to checkpoint_dir/last.ckpt (every checkpoint_every epochs and at the end)
/// and checkpoint_dir/best.ckpt (whenever validation AUC improves).
void train(TrainState& state, const TrainConfig& config, const Dataset& data, const TrainHooks& hooks = {});

/// N x C ranking scores (inference_scores per sample).
Mat score_dataset(const HydraModel& model, const Dataset& data);
AucReport evaluate_dataset(const HydraModel& model, const Dataset& data, const std::vector<std::string>& class_names,
                           TieMode mode = TieMode::kLiteral);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Sections, in order: config, state, params, adam_m, adam_v, metrics.
/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& train,
                     const std::vector<std::string>& class_names = {});

struct LoadedCheckpoint {
  TrainState state;
  ModelConfig model_config;
  TrainConfig train_config;
  std::vector<std::string> class_names;  // empty when not recorded
  std::string config_hash;
};

/// With `expected`, arrays are checked against a model built from that config instead of
/// the stored one.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace hydravit
