#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hydravit/data.hpp"
#include "hydravit/model.hpp"

namespace hydravit {

struct TrainConfig {
  int batch_size = 35;
  double learning_rate = 1e-4;
  int epochs = 120;
  std::uint64_t seed = 0;
  std::string optimizer = "adam";
  bool deterministic = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm ceiling; 0 disables clipping.
  double grad_clip = 0.0;
  /// Epochs between checkpoints; 0 keeps only the final one.
  int checkpoint_every = 1;

  void validate() const;
};

/// Where training and test samples come from.
struct DataConfig {
  std::string source = "manifest";  // "manifest" or "synthetic"
  std::string manifest;
  std::string image_root;  // defaults to the manifest's directory
  std::string split_file;  // optional external split
  double test_fraction = 25596.0 / 112120.0;
  std::uint64_t split_seed = 0;
  /// Fraction of the training patients held out for model selection; 0 disables.
  double validation_fraction = 0.0;
  std::vector<std::string> class_names = chestxray14_class_names();

  CoocSpec synthetic;
  std::int64_t synthetic_train = 2000;
  std::int64_t synthetic_test = 500;

  void validate() const;
};

struct ExperimentConfig {
  ModelConfig model = ModelConfig::reference_default();
  TrainConfig train;
  DataConfig data;
  std::string spatial_weights;  // optional pretrained bundle directory

  void validate() const;
  /// Desk-scale synthetic task: miniature model, four classes, boosted pair (0, 1).
  static ExperimentConfig synthetic_default();
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const CoocSpec& c);
nlohmann::json to_json(const DataConfig& c);
nlohmann::json to_json(const ExperimentConfig& c);

/// Missing keys keep their defaults; unknown keys raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = ModelConfig::reference_default());
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig base = {});

ExperimentConfig load_experiment(const std::string& path);
void save_experiment(const std::string& path, const ExperimentConfig& config);

/// Applies "key=value" overrides. Keys are dotted paths ("train.epochs") or leaf names that
/// occur exactly once ("epochs"). Values parse as JSON, falling back to a plain string.
/// Unknown or ambiguous keys and type changes raise ConfigError naming the key.
nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& overrides);

/// Hex SHA-1 of the bytes.
std::string sha1_hex(const std::string& bytes);
/// Git-style content hash: SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_blob_hash(const std::string& bytes);
std::string git_blob_hash_file(const std::string& path);
/// Hash of the canonical JSON serialization.
std::string config_hash(const nlohmann::json& j);

}  // namespace hydravit
