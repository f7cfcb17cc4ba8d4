#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hydravit/model.hpp"

namespace hydravit {

/// How a positive/negative pair with equal scores is credited.
enum class TieMode {
  kLiteral,       // strict inequality: tied pairs earn nothing
  kConventional,  // tied pairs earn one half (Mann-Whitney)
};

std::string to_string(TieMode mode);
TieMode parse_tie_mode(const std::string& name);

/// AUC is undefined when only one label value is present.
class UndefinedAucError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fraction of (negative, positive) pairs in which the positive scores higher.
/// O(N log N). Labels are 0/1.
double auc_pairwise(std::span<const double> scores, std::span<const int> labels,
                    TieMode mode = TieMode::kLiteral, const std::string& class_name = "");

struct RocCurve {
  std::vector<double> fpr;
  std::vector<double> tpr;
  std::vector<double> thresholds;  // +inf first, then distinct scores descending

  std::size_t size() const { return fpr.size(); }
};

/// ROC from sweeping every distinct score as a ">= threshold" cutoff.
RocCurve roc_points(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area under the curve.
double roc_area(const RocCurve& curve);

struct ClassAuc {
  std::string name;
  double auc = 0.0;
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
};

struct AucReport {
  std::vector<ClassAuc> per_class;
  std::vector<std::string> excluded;  // classes lacking positives or negatives
  double macro_mean = 0.0;
  double macro_std = 0.0;  // population standard deviation across classes
  TieMode tie_mode = TieMode::kLiteral;
};

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// scores[c][i] and labels[c][i] for class c, sample i.
AucReport macro_report(const std::vector<std::vector<double>>& scores,
                       const std::vector<std::vector<int>>& labels,
                       const std::vector<std::string>& class_names, TieMode mode = TieMode::kLiteral);

/// CSV rows (class, auc, n_pos, n_neg, tie_mode) plus a trailing macro summary row.
void write_report_csv(const std::filesystem::path& path, const AucReport& report);
void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve);

struct SaliencyMap {
  Mat heatmap;  // H x W, values in [0, 1]
  int target_class = 0;
  int peak_row = 0;
  int peak_col = 0;
};

/// GradCAM core: channel weights are spatial means of the gradient; the map is the
/// rectified weighted channel sum, bilinearly resized to height x width, max-normalized.
SaliencyMap gradcam_from_gradients(const FeatureMap& features, const Mat& gradient, int height,
                                   int width, int target_class = 0);

/// GradCAM against the pre-logistic individual-branch logit of target_class.
SaliencyMap gradcam_saliency(const HydraModel& model, const CxrImage& image, int target_class);

/// 8-bit grayscale PNG plus a JSON sidecar with the class and peak location.
void write_saliency(const std::filesystem::path& png_path, const SaliencyMap& map,
                    const std::string& class_name);

}  // namespace hydravit

namespace hydravit {

/// Static ROC chart: one polyline per curve plus the chance diagonal, saved as PNG.
void write_roc_plot(const std::filesystem::path& png_path,
                    const std::vector<std::pair<std::string, RocCurve>>& curves, const std::string& title = "");

}  // namespace hydravit
