#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hydravit/config.hpp"
#include "hydravit/data.hpp"
#include "hydravit/evaluation.hpp"
#include "hydravit/training.hpp"

namespace hydravit {

/// output_dir/{checkpoints, metrics, reports, saliency, plots}
struct OutputDirs {
  std::filesystem::path root;
  std::filesystem::path checkpoints;
  std::filesystem::path metrics;
  std::filesystem::path reports;
  std::filesystem::path saliency;
  std::filesystem::path plots;

  static OutputDirs create(const std::filesystem::path& root);
};

struct PreparedData {
  std::vector<std::string> class_names;
  DatasetManifest manifest;
  SplitSpec split;
  Dataset train;
  Dataset validation;  // carved from the training patients when data.validation_fraction > 0
  Dataset test;
};

/// Loads or generates the samples and splits them by patient (or reads data.split_file).
PreparedData prepare_data(const ExperimentConfig& config, std::ostream* log = nullptr);

struct RunSummary {
  std::string tag;
  std::string config_hash;
  std::string split_hash;
  AucReport test_report;
  Mat test_scores;  // N_test x C
  Mat test_raw;     // N_test x C branch probabilities before weighting
  std::vector<EpochMetrics> history;
};

/// Trains one configuration and evaluates it on the test split. Per-run artifacts:
///   reports/<tag>/{config.json, split.csv, test_auc.csv, test_predictions.csv, roc/<class>.csv}
///   metrics/<tag>.csv, checkpoints/<tag>/{last,best}.ckpt, plots/<tag>_roc.png
/// ensemble_per_label trains one single-label model per class under checkpoints/<tag>/class<c>.
RunSummary run_experiment(const ExperimentConfig& config, const PreparedData& data, const OutputDirs& dirs,
                          const std::string& tag, bool resume = false, std::ostream* log = nullptr);

/// Test subsets: exactly one label, two or more labels, everything. Label-free samples
/// serve as negatives in the first two.
enum class Subset { kSingle, kMultiple, kAll };
std::string to_string(Subset s);
std::vector<std::size_t> subset_indices(const Dataset& test, Subset s);

struct SubsetReport {
  Subset subset = Subset::kAll;
  std::size_t samples = 0;
  bool usable = false;  // false when no class has both label values in the subset
  AucReport report;
};

std::vector<SubsetReport> subset_reports(const Mat& scores, const Dataset& test,
                                         const std::vector<std::string>& class_names, TieMode mode);

/// Rejects unknown and duplicate names with ConfigError.
std::vector<Variant> parse_variant_grid(const std::vector<std::string>& names);

struct AblationResult {
  std::vector<RunSummary> runs;
  std::vector<std::vector<SubsetReport>> subsets;  // parallel to runs
  std::filesystem::path table_csv;
};

/// Trains every variant on one shared split. Writes reports/table1.csv (rows single, multiple,
/// all; one "mean±std" column per variant), reports/table1_long.csv and
/// reports/per_class_auc.csv (classes x variants).
AblationResult run_ablation(const ExperimentConfig& base, const std::vector<std::string>& variants,
                            const OutputDirs& dirs, std::ostream* log = nullptr);

/// sample_id,class_name,raw_probability,weighted_score,decision
void write_predictions_csv(const std::filesystem::path& path, const std::vector<std::string>& sample_ids,
                           const std::vector<std::string>& class_names, const Mat& raw, const Mat& weighted,
                           double threshold = 0.5);

}  // namespace hydravit
