#include "hydravit/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hydravit/data.hpp"

namespace hydravit {
namespace {

struct PairCounts {
  std::int64_t positives = 0;
  std::int64_t negatives = 0;
  std::int64_t ordered = 0;  // negative strictly below positive
  std::int64_t tied = 0;
};

PairCounts count_pairs(std::span<const double> scores, std::span<const int> labels,
                       const std::string& class_name) {
  if (scores.size() != labels.size())
    throw DimensionError("auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  PairCounts pc;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::int64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (!std::isfinite(scores[order[j]])) throw ArgumentError("auc: non-finite score");
      (labels[order[j]] ? pos : neg) += 1;
      ++j;
    }
    pc.ordered += pos * pc.negatives;
    pc.tied += pos * neg;
    pc.positives += pos;
    pc.negatives += neg;
    i = j;
  }
  if (pc.positives == 0 || pc.negatives == 0)
    throw UndefinedAucError("AUC undefined for class '" + class_name + "': only " +
                            (pc.positives == 0 ? std::string("negative") : std::string("positive")) +
                            " labels present");
  return pc;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string to_string(TieMode mode) { return mode == TieMode::kLiteral ? "literal" : "conventional"; }

TieMode parse_tie_mode(const std::string& name) {
  if (name == "literal") return TieMode::kLiteral;
  if (name == "conventional") return TieMode::kConventional;
  throw ConfigError("unknown tie mode '" + name + "'");
}

double auc_pairwise(std::span<const double> scores, std::span<const int> labels, TieMode mode,
                    const std::string& class_name) {
  const PairCounts pc = count_pairs(scores, labels, class_name);
  const double pairs = static_cast<double>(pc.positives) * static_cast<double>(pc.negatives);
  if (mode == TieMode::kLiteral) return static_cast<double>(pc.ordered) / pairs;
  return (static_cast<double>(pc.ordered) + 0.5 * static_cast<double>(pc.tied)) / pairs;
}

RocCurve roc_points(std::span<const double> scores, std::span<const int> labels) {
  const PairCounts pc = count_pairs(scores, labels, "");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.fpr.push_back(0.0);
  curve.tpr.push_back(0.0);
  curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(pc.negatives));
    curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pc.positives));
    curve.thresholds.push_back(t);
  }
  return curve;
}

double roc_area(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k)
    area += (curve.fpr[k] - curve.fpr[k - 1]) * (curve.tpr[k] + curve.tpr[k - 1]) * 0.5;
  return area;
}

AucReport macro_report(const std::vector<std::vector<double>>& scores,
                       const std::vector<std::vector<int>>& labels,
                       const std::vector<std::string>& class_names, TieMode mode) {
  if (scores.size() != labels.size() || scores.size() != class_names.size())
    throw DimensionError("macro_report: class count mismatch");
  AucReport report;
  report.tie_mode = mode;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const auto pos = std::count_if(labels[c].begin(), labels[c].end(), [](int y) { return y != 0; });
    const auto neg = static_cast<std::int64_t>(labels[c].size()) - pos;
    if (pos == 0 || neg == 0) {
      report.excluded.push_back(class_names[c]);
      continue;
    }
    report.per_class.push_back({class_names[c], auc_pairwise(scores[c], labels[c], mode, class_names[c]), pos, neg});
  }
  if (report.per_class.empty()) throw ReportError("no class has both positive and negative labels");
  const double n = static_cast<double>(report.per_class.size());
  for (const auto& c : report.per_class) report.macro_mean += c.auc;
  report.macro_mean /= n;
  double var = 0.0;
  for (const auto& c : report.per_class) var += (c.auc - report.macro_mean) * (c.auc - report.macro_mean);
  report.macro_std = std::sqrt(var / n);
  return report;
}

void write_report_csv(const std::filesystem::path& path, const AucReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "class,auc,n_pos,n_neg,tie_mode\n";
  const std::string mode = to_string(report.tie_mode);
  for (const auto& c : report.per_class)
    out << c.name << ',' << fmt(c.auc) << ',' << c.n_pos << ',' << c.n_neg << ',' << mode << '\n';
  for (const auto& name : report.excluded) out << name << ",,,," << mode << '\n';
  out << "macro_mean," << fmt(report.macro_mean) << ",,," << mode << '\n';
  out << "macro_std," << fmt(report.macro_std) << ",,," << mode << '\n';
}

void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "threshold,fpr,tpr\n";
  for (std::size_t k = 0; k < curve.size(); ++k)
    out << fmt(curve.thresholds[k]) << ',' << fmt(curve.fpr[k]) << ',' << fmt(curve.tpr[k]) << '\n';
}

SaliencyMap gradcam_from_gradients(const FeatureMap& features, const Mat& gradient, int height,
                                   int width, int target_class) {
  if (gradient.rows() != features.values.rows() || gradient.cols() != features.values.cols())
    throw DimensionError("gradcam: gradient shape does not match the feature map");
  const Vec channel_weights = gradient.rowwise().mean();
  Mat cam(features.extent, features.extent);
  for (int r = 0; r < features.extent; ++r)
    for (int c = 0; c < features.extent; ++c) {
      double acc = 0.0;
      for (int ch = 0; ch < features.channels; ++ch) acc += channel_weights[ch] * features.at(r, c, ch);
      cam(r, c) = std::max(acc, 0.0);
    }
  SaliencyMap map;
  map.target_class = target_class;
  map.heatmap = resize_bilinear(cam, height, width);
  const double peak = map.heatmap.maxCoeff(&map.peak_row, &map.peak_col);
  if (peak > 0.0)
    map.heatmap /= peak;
  else
    map.heatmap.setZero();
  return map;
}

SaliencyMap gradcam_saliency(const HydraModel& model, const CxrImage& image, int target_class) {
  if (target_class < 0 || target_class >= model.config.num_classes)
    throw ArgumentError("gradcam: class id " + std::to_string(target_class) + " outside [0, " +
                        std::to_string(model.config.num_classes) + ")");
  ModelTrace trace;
  forward(model, image, &trace);
  HydraModel scratch = zeros_like(model);
  Vec gi = Vec::Zero(static_cast<Eigen::Index>(model.heads.individual.size()));
  Vec ga = Vec::Zero(model.heads.aggregate_weight.rows());
  if (model.heads.has_individual())
    gi[target_class] = 1.0;
  else
    ga[target_class] = 1.0;
  const Mat grad = backward(model, trace, gi, ga, scratch, /*through_spatial=*/false);
  return gradcam_from_gradients(trace.features, grad, image.height(), image.width(), target_class);
}

void write_saliency(const std::filesystem::path& png_path, const SaliencyMap& map,
                    const std::string& class_name) {
  if (png_path.has_parent_path()) std::filesystem::create_directories(png_path.parent_path());
  cv::Mat img(static_cast<int>(map.heatmap.rows()), static_cast<int>(map.heatmap.cols()), CV_8UC1);
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c)
      img.at<unsigned char>(r, c) = static_cast<unsigned char>(std::lround(std::clamp(map.heatmap(r, c), 0.0, 1.0) * 255.0));
  if (!cv::imwrite(png_path.string(), img)) throw std::runtime_error("cannot write " + png_path.string());
  nlohmann::json sidecar{{"class", class_name},
                         {"class_index", map.target_class},
                         {"max_activation", {{"row", map.peak_row}, {"col", map.peak_col}}},
                         {"height", img.rows},
                         {"width", img.cols}};
  auto json_path = png_path;
  json_path.replace_extension(".json");
  std::ofstream(json_path) << sidecar.dump(2) << '\n';
}

void write_roc_plot(const std::filesystem::path& png_path,
                    const std::vector<std::pair<std::string, RocCurve>>& curves, const std::string& title) {
  constexpr int kSize = 640;
  constexpr int kMargin = 60;
  constexpr int kPlot = kSize - 2 * kMargin;
  cv::Mat img(kSize, kSize + 200, CV_8UC3, cv::Scalar(255, 255, 255));
  auto at = [&](double fpr, double tpr) {
    return cv::Point(kMargin + static_cast<int>(std::lround(fpr * kPlot)),
                     kMargin + kPlot - static_cast<int>(std::lround(tpr * kPlot)));
  };
  cv::rectangle(img, at(0, 1), at(1, 0), cv::Scalar(0, 0, 0), 1);
  cv::line(img, at(0, 0), at(1, 1), cv::Scalar(170, 170, 170), 1, cv::LINE_AA);
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    char label[8];
    std::snprintf(label, sizeof label, "%.2f", v);
    cv::putText(img, label, at(v, 0) + cv::Point(-14, 20), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
    cv::putText(img, label, at(0, v) + cv::Point(-44, 4), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
  }
  cv::putText(img, "false positive rate", at(0.3, 0) + cv::Point(0, 45), cv::FONT_HERSHEY_SIMPLEX, 0.5,
              cv::Scalar(0, 0, 0), 1);
  cv::putText(img, "true positive rate", cv::Point(4, kMargin - 10), cv::FONT_HERSHEY_SIMPLEX, 0.5,
              cv::Scalar(0, 0, 0), 1);
  if (!title.empty())
    cv::putText(img, title, cv::Point(kSize / 2 - 40, 24), cv::FONT_HERSHEY_SIMPLEX, 0.6, cv::Scalar(0, 0, 0), 1);

  for (std::size_t i = 0; i < curves.size(); ++i) {
    cv::Mat hue(1, 1, CV_8UC3, cv::Scalar(static_cast<int>(180.0 * i / std::max<std::size_t>(curves.size(), 1)), 220, 200));
    cv::Mat bgr;
    cv::cvtColor(hue, bgr, cv::COLOR_HSV2BGR);
    const auto px = bgr.at<cv::Vec3b>(0, 0);
    const cv::Scalar colour(px[0], px[1], px[2]);
    const auto& roc = curves[i].second;
    for (std::size_t k = 1; k < roc.size(); ++k)
      cv::line(img, at(roc.fpr[k - 1], roc.tpr[k - 1]), at(roc.fpr[k], roc.tpr[k]), colour, 2, cv::LINE_AA);
    char entry[96];
    std::snprintf(entry, sizeof entry, "%s (%.3f)", curves[i].first.c_str(), roc_area(roc));
    const cv::Point key(kSize - 10, kMargin + 20 * static_cast<int>(i));
    cv::line(img, key, key + cv::Point(20, 0), colour, 3);
    cv::putText(img, entry, key + cv::Point(26, 4), cv::FONT_HERSHEY_SIMPLEX, 0.42, cv::Scalar(0, 0, 0), 1);
  }
  if (png_path.has_parent_path()) std::filesystem::create_directories(png_path.parent_path());
  if (!cv::imwrite(png_path.string(), img)) throw std::runtime_error("cannot write " + png_path.string());
}

}  // namespace hydravit
