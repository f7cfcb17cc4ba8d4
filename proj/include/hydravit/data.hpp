#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hydravit/common.hpp"
#include "hydravit/model.hpp"
#include "hydravit/spatial_encoder.hpp"

namespace hydravit {

/// C binary indicators. "No Finding" is the all-zero vector.
using LabelVector = std::vector<int>;

/// The 14 pathology labels as spelled in the ChestX-ray14 label file.
const std::vector<std::string>& chestxray14_class_names();

inline constexpr const char* kNoFinding = "No Finding";

struct ManifestRow {
  std::string sample_id;
  std::string image_path;
  std::string patient_id;
  LabelVector labels;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<ManifestRow> rows;

  std::size_t size() const { return rows.size(); }
  ClassCounts class_counts() const;
};

/// Malformed manifest contents; the message carries the 1-based line number.
class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Duplicate ids or a split that does not partition the manifest.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// CSV with header columns sample_id, image, patient_id, labels (any order).
/// Labels are '|'-separated class names; "No Finding" and the empty string mean no labels.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              const std::vector<std::string>& class_names = chestxray14_class_names());
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Decoded raster, channels interleaved, original intensity scale.
struct RawImage {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> data;
};

RawImage decode_image(const std::filesystem::path& path);

/// Half-pixel-centred bilinear resampling with edge clamping.
Mat resize_bilinear(const Mat& src, int height, int width);

/// Channel average -> bilinear resize to target x target -> per-image min-max to [0, 1].
/// Constant images become all zeros.
CxrImage preprocess_image(const RawImage& raw, int target = 224);

struct SplitSpec {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  double target_test_fraction = 0.0;
  double achieved_test_fraction = 0.0;
  std::optional<std::string> warning;
};

/// Greedy seeded assignment of whole patients to the test split so that per-class test
/// counts track target_test_fraction * N_c, refined by single-patient flips.
/// No patient ever spans both splits.
SplitSpec patient_split(const DatasetManifest& manifest, double target_test_fraction, std::uint64_t seed);

/// |prevalence_train(c) - prevalence_test(c)| per class.
std::vector<double> prevalence_deviation(const DatasetManifest& manifest, const SplitSpec& split);

/// Number of patients that contribute samples to both splits.
std::size_t patient_overlap(const DatasetManifest& manifest, const SplitSpec& split);

/// CSV rows (sample_id, split) with split in {train, test}.
void write_split_csv(const std::filesystem::path& path, const SplitSpec& split);
/// Reads a split file and checks that it partitions the manifest.
SplitSpec read_split_csv(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Parameters of the synthetic multi-label generator.
struct CoocSpec {
  int classes = 4;
  std::vector<double> marginals;  // per-class prevalence, each in (0, 1)
  Mat pair_boost;                 // symmetric, unit diagonal, entries >= 0
  int image_size = 16;
  /// Blob amplitude relative to unit-variance pixel noise. With the default noise, a
  /// zero-mean matched filter reaches per-class AUC above 0.8 from 0.75 upwards (about 0.91 there).
  double signal_strength = 2.0;
  double noise = 1.0;
  int patients = 0;  // 0: one patient per sample
  std::uint64_t seed = 0;

  /// Independent classes with the given prevalence.
  static CoocSpec independent(int classes, double prevalence, int image_size, std::uint64_t seed);
  void validate() const;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Example {
  std::string sample_id;
  CxrImage image;
  LabelVector labels;
};

using Dataset = std::vector<Example>;

struct SyntheticSet {
  DatasetManifest manifest;
  Dataset examples;
};

/// Per-class spatial template: a Gaussian blob at a class-specific position, peak 1.
Mat class_template(int class_index, int classes, int image_size);

/// Base log-odds that reproduce spec.marginals under the pairwise boosts.
/// Throws GenerationError when no such parameters exist.
std::vector<double> calibrate_label_model(const CoocSpec& spec);

/// Labels from the pairwise model exp(sum theta_c y_c) * prod boost_ij^(y_i y_j), then
/// image = noise + signal * sum_c y_c * template_c, min-max normalized.
/// Pure function of (spec, n).
SyntheticSet synth_generate(const CoocSpec& spec, std::int64_t n);

/// Writes manifest.csv and 16-bit PNGs under dir/images.
void export_synthetic(const std::filesystem::path& dir, const SyntheticSet& set);

/// Decodes and preprocesses every manifest row; image paths resolve against base_dir.
Dataset load_dataset(const DatasetManifest& manifest, const std::filesystem::path& base_dir, int target);

/// Subset of a dataset by sample id, in the order of ids.
Dataset select(const Dataset& data, const std::vector<std::string>& ids);

ClassCounts class_counts(const Dataset& data, int classes);

}  // namespace hydravit
