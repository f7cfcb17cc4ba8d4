#include "hydravit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace hydravit {
namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(s);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string format_id(const char* prefix, std::int64_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06lld", prefix, static_cast<long long>(k));
  return buf;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

const std::vector<std::string>& chestxray14_class_names() {
  static const std::vector<std::string> names{
      "Atelectasis", "Cardiomegaly",  "Effusion", "Infiltration", "Mass",
      "Nodule",      "Pneumonia",     "Pneumothorax", "Consolidation", "Edema",
      "Emphysema",   "Fibrosis",      "Pleural_Thickening", "Hernia"};
  return names;
}

ClassCounts DatasetManifest::class_counts() const {
  ClassCounts cc{std::vector<std::int64_t>(class_names.size(), 0), static_cast<std::int64_t>(rows.size())};
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.labels.size(); ++c) cc.per_class[c] += r.labels[c];
  return cc;
}

DatasetManifest load_manifest(const std::filesystem::path& path, const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.class_names = class_names;
  std::unordered_map<std::string, int> class_index;
  for (std::size_t c = 0; c < class_names.size(); ++c) class_index[class_names[c]] = static_cast<int>(c);

  std::string line;
  if (!std::getline(in, line)) throw ManifestError(path.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
  for (const char* need : {"sample_id", "image", "patient_id", "labels"})
    if (!col.count(need)) throw ManifestError(path.string() + ": header lacks column '" + need + "'");

  std::unordered_set<std::string> seen;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != header.size())
      throw ManifestError(path.string() + ": line " + std::to_string(line_no) + " has " +
                          std::to_string(fields.size()) + " fields, expected " + std::to_string(header.size()));
    ManifestRow row;
    row.sample_id = trim(fields[col["sample_id"]]);
    row.image_path = trim(fields[col["image"]]);
    row.patient_id = trim(fields[col["patient_id"]]);
    row.labels.assign(class_names.size(), 0);
    const std::string labels = trim(fields[col["labels"]]);
    if (!labels.empty() && labels != kNoFinding) {
      for (const auto& raw : split(labels, '|')) {
        const std::string name = trim(raw);
        auto it = class_index.find(name);
        if (it == class_index.end())
          throw ManifestError(path.string() + ": line " + std::to_string(line_no) + ": unknown label '" + name + "'");
        row.labels[static_cast<std::size_t>(it->second)] = 1;
      }
    }
    if (!seen.insert(row.sample_id).second)
      throw IntegrityError(path.string() + ": line " + std::to_string(line_no) + ": duplicate sample_id '" +
                           row.sample_id + "'");
    m.rows.push_back(std::move(row));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "sample_id,image,patient_id,labels\n";
  for (const auto& r : manifest.rows) {
    std::string labels;
    for (std::size_t c = 0; c < r.labels.size(); ++c)
      if (r.labels[c]) labels += (labels.empty() ? "" : "|") + manifest.class_names[c];
    out << r.sample_id << ',' << r.image_path << ',' << r.patient_id << ',' << (labels.empty() ? kNoFinding : labels)
        << '\n';
  }
}

RawImage decode_image(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
  if (img.empty()) throw IngestionError("cannot decode image " + path.string());
  cv::Mat f;
  img.convertTo(f, CV_64F);
  RawImage raw{f.rows, f.cols, f.channels(), {}};
  raw.data.resize(static_cast<std::size_t>(f.rows) * f.cols * f.channels());
  for (int r = 0; r < f.rows; ++r) {
    const double* src = f.ptr<double>(r);
    std::copy(src, src + f.cols * f.channels(), raw.data.begin() + static_cast<std::ptrdiff_t>(r) * f.cols * f.channels());
  }
  return raw;
}

Mat resize_bilinear(const Mat& src, int height, int width) {
  const auto in_h = static_cast<int>(src.rows());
  const auto in_w = static_cast<int>(src.cols());
  if (in_h == height && in_w == width) return src;
  auto taps = [](int out_n, int in_n) {
    std::vector<std::pair<int, double>> t(static_cast<std::size_t>(out_n));
    const double scale = static_cast<double>(in_n) / out_n;
    for (int i = 0; i < out_n; ++i) {
      double s = (i + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
      const int i0 = std::min(static_cast<int>(std::floor(s)), in_n - 1);
      t[static_cast<std::size_t>(i)] = {i0, s - i0};
    }
    return t;
  };
  const auto ty = taps(height, in_h);
  const auto tx = taps(width, in_w);
  Mat out(height, width);
  for (int y = 0; y < height; ++y) {
    const auto [y0, fy] = ty[static_cast<std::size_t>(y)];
    const int y1 = std::min(y0 + 1, in_h - 1);
    for (int x = 0; x < width; ++x) {
      const auto [x0, fx] = tx[static_cast<std::size_t>(x)];
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double top = src(y0, x0) * (1 - fx) + src(y0, x1) * fx;
      const double bottom = src(y1, x0) * (1 - fx) + src(y1, x1) * fx;
      out(y, x) = top * (1 - fy) + bottom * fy;
    }
  }
  return out;
}

CxrImage preprocess_image(const RawImage& raw, int target) {
  if (raw.height <= 0 || raw.width <= 0 || raw.channels <= 0 ||
      raw.data.size() != static_cast<std::size_t>(raw.height) * raw.width * raw.channels)
    throw IngestionError("raw image has inconsistent extents");
  Mat gray(raw.height, raw.width);
  for (int r = 0; r < raw.height; ++r)
    for (int c = 0; c < raw.width; ++c) {
      double acc = 0.0;
      const std::size_t base = (static_cast<std::size_t>(r) * raw.width + c) * raw.channels;
      for (int k = 0; k < raw.channels; ++k) acc += raw.data[base + k];
      gray(r, c) = acc / raw.channels;
    }
  Mat resized = resize_bilinear(gray, target, target);
  const double lo = resized.minCoeff();
  const double hi = resized.maxCoeff();
  if (!(hi > lo)) return CxrImage{Mat::Zero(target, target)};
  resized = (resized.array() - lo) / (hi - lo);
  return CxrImage{std::move(resized)};
}

SplitSpec patient_split(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
  if (manifest.rows.empty()) throw ArgumentError("patient_split: empty manifest");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ArgumentError("patient_split: fraction must lie in (0, 1)");

  struct Patient {
    std::string id;
    std::vector<std::size_t> rows;
    std::vector<std::int64_t> counts;
  };
  const std::size_t C = manifest.class_names.size();
  std::vector<Patient> patients;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    const auto& row = manifest.rows[i];
    auto [it, inserted] = index.try_emplace(row.patient_id, patients.size());
    if (inserted) patients.push_back({row.patient_id, {}, std::vector<std::int64_t>(C, 0)});
    auto& p = patients[it->second];
    p.rows.push_back(i);
    for (std::size_t c = 0; c < C; ++c) p.counts[c] += row.labels[c];
  }

  SplitSpec split;
  split.target_test_fraction = fraction;
  if (patients.size() == 1) {
    split.warning = "single patient '" + patients[0].id + "': all samples assigned to train";
    for (const auto& r : manifest.rows) split.train_ids.push_back(r.sample_id);
    return split;
  }

  Rng rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);
  std::stable_sort(patients.begin(), patients.end(),
                   [](const Patient& a, const Patient& b) { return a.rows.size() > b.rows.size(); });

  const auto totals = manifest.class_counts();
  const double n_total = static_cast<double>(manifest.rows.size());
  std::vector<double> target(C);
  for (std::size_t c = 0; c < C; ++c) target[c] = fraction * static_cast<double>(totals.per_class[c]);
  const double target_n = fraction * n_total;

  std::vector<double> test_counts(C, 0.0);
  double test_n = 0.0;
  auto cost = [&](const std::vector<std::int64_t>* add, double add_n) {
    double j = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double have = test_counts[c] + (add ? static_cast<double>((*add)[c]) : 0.0);
      const double d = (have - target[c]) / std::max<double>(1.0, static_cast<double>(totals.per_class[c]));
      j += d * d;
    }
    const double dn = (test_n + add_n - target_n) / n_total;
    return j + dn * dn;
  };

  auto move = [&](const Patient& p, double sign) {
    for (std::size_t c = 0; c < C; ++c) test_counts[c] += sign * static_cast<double>(p.counts[c]);
    test_n += sign * static_cast<double>(p.rows.size());
  };
  std::vector<bool> in_test(patients.size(), false);
  for (std::size_t k = 0; k < patients.size(); ++k) {
    const auto& p = patients[k];
    if (cost(&p.counts, static_cast<double>(p.rows.size())) < cost(nullptr, 0.0)) {
      move(p, 1.0);
      in_test[k] = true;
    }
  }
  // Local search: flip single patients while that lowers the deviation.
  for (int pass = 0; pass < 100; ++pass) {
    bool changed = false;
    for (std::size_t k = 0; k < patients.size(); ++k) {
      const auto& p = patients[k];
      const double before = cost(nullptr, 0.0);
      const double sign = in_test[k] ? -1.0 : 1.0;
      move(p, sign);
      if (cost(nullptr, 0.0) < before - 1e-15) {
        in_test[k] = !in_test[k];
        changed = true;
      } else {
        move(p, -sign);
      }
    }
    if (!changed) break;
  }
  std::vector<bool> to_test(manifest.rows.size(), false);
  for (std::size_t k = 0; k < patients.size(); ++k)
    if (in_test[k])
      for (auto r : patients[k].rows) to_test[r] = true;
  for (std::size_t i = 0; i < manifest.rows.size(); ++i)
    (to_test[i] ? split.test_ids : split.train_ids).push_back(manifest.rows[i].sample_id);
  split.achieved_test_fraction = test_n / n_total;
  return split;
}

std::vector<double> prevalence_deviation(const DatasetManifest& manifest, const SplitSpec& split) {
  const std::unordered_set<std::string> test(split.test_ids.begin(), split.test_ids.end());
  const std::size_t C = manifest.class_names.size();
  std::vector<double> tr(C, 0.0), te(C, 0.0);
  double n_tr = 0, n_te = 0;
  for (const auto& r : manifest.rows) {
    const bool is_test = test.count(r.sample_id) > 0;
    (is_test ? n_te : n_tr) += 1;
    for (std::size_t c = 0; c < C; ++c) (is_test ? te : tr)[c] += r.labels[c];
  }
  std::vector<double> dev(C, 0.0);
  if (n_tr == 0 || n_te == 0) return dev;
  for (std::size_t c = 0; c < C; ++c) dev[c] = std::abs(tr[c] / n_tr - te[c] / n_te);
  return dev;
}

std::size_t patient_overlap(const DatasetManifest& manifest, const SplitSpec& split) {
  const std::unordered_set<std::string> test(split.test_ids.begin(), split.test_ids.end());
  std::set<std::string> train_patients, test_patients;
  for (const auto& r : manifest.rows) (test.count(r.sample_id) ? test_patients : train_patients).insert(r.patient_id);
  std::size_t overlap = 0;
  for (const auto& p : test_patients) overlap += train_patients.count(p);
  return overlap;
}

void write_split_csv(const std::filesystem::path& path, const SplitSpec& split) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "sample_id,split\n";
  for (const auto& id : split.train_ids) out << id << ",train\n";
  for (const auto& id : split.test_ids) out << id << ",test\n";
}

SplitSpec read_split_csv(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ifstream in(path);
  if (!in) throw IntegrityError("cannot open split file " + path.string());
  std::unordered_set<std::string> known;
  for (const auto& r : manifest.rows) known.insert(r.sample_id);

  SplitSpec result;
  std::unordered_set<std::string> seen;
  std::string line;
  std::getline(in, line);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    if (f.size() != 2) throw IntegrityError(where + ": expected sample_id,split");
    const std::string id = trim(f[0]);
    const std::string which = trim(f[1]);
    if (!known.count(id)) throw IntegrityError(where + ": sample '" + id + "' is not in the manifest");
    if (!seen.insert(id).second) throw IntegrityError(where + ": sample '" + id + "' listed twice");
    if (which == "train")
      result.train_ids.push_back(id);
    else if (which == "test")
      result.test_ids.push_back(id);
    else
      throw IntegrityError(where + ": unknown split '" + which + "'");
  }
  if (seen.size() != known.size())
    throw IntegrityError(path.string() + ": " + std::to_string(known.size() - seen.size()) +
                         " manifest samples have no split assignment");
  if (patient_overlap(manifest, result) > 0)
    throw IntegrityError(path.string() + ": a patient appears in both train and test");
  result.achieved_test_fraction = static_cast<double>(result.test_ids.size()) / static_cast<double>(known.size());
  result.target_test_fraction = result.achieved_test_fraction;
  return result;
}

CoocSpec CoocSpec::independent(int classes, double prevalence, int image_size, std::uint64_t seed) {
  CoocSpec s;
  s.classes = classes;
  s.marginals.assign(static_cast<std::size_t>(classes), prevalence);
  s.pair_boost = Mat::Ones(classes, classes);
  s.image_size = image_size;
  s.seed = seed;
  return s;
}

void CoocSpec::validate() const {
  if (classes < 1 || classes > 20) throw ConfigError("synthetic: classes must lie in [1, 20]");
  if (static_cast<int>(marginals.size()) != classes)
    throw ConfigError("synthetic: expected " + std::to_string(classes) + " marginals, got " +
                      std::to_string(marginals.size()));
  for (double p : marginals)
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("synthetic: marginals must lie strictly inside (0, 1)");
  if (pair_boost.rows() != classes || pair_boost.cols() != classes)
    throw ConfigError("synthetic: pair_boost must be classes x classes");
  for (int i = 0; i < classes; ++i)
    for (int j = 0; j < classes; ++j) {
      if (!(pair_boost(i, j) >= 0.0) || !std::isfinite(pair_boost(i, j)))
        throw ConfigError("synthetic: pair_boost entries must be finite and non-negative");
      if (pair_boost(i, j) != pair_boost(j, i)) throw ConfigError("synthetic: pair_boost must be symmetric");
    }
  if (image_size < 4) throw ConfigError("synthetic: image_size must be at least 4");
  if (!(noise >= 0.0) || !(signal_strength >= 0.0)) throw ConfigError("synthetic: noise and signal must be >= 0");
  if (patients < 0) throw ConfigError("synthetic: patients must be >= 0");
}

namespace {

/// Unnormalized log-weight of every label state; -inf where a zero boost forbids a pair.
std::vector<double> state_log_weights(const CoocSpec& spec, const std::vector<double>& theta) {
  const int C = spec.classes;
  const std::size_t S = std::size_t{1} << C;
  std::vector<double> lw(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    double v = 0.0;
    for (int i = 0; i < C && std::isfinite(v); ++i) {
      if (!(s >> i & 1)) continue;
      v += theta[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < C; ++j)
        if (s >> j & 1) v += std::log(spec.pair_boost(i, j));
    }
    lw[s] = v;
  }
  return lw;
}

std::vector<double> state_probabilities(const CoocSpec& spec, const std::vector<double>& theta) {
  auto lw = state_log_weights(spec, theta);
  const double top = *std::max_element(lw.begin(), lw.end());
  double z = 0.0;
  for (auto& v : lw) z += (v = std::exp(v - top));
  for (auto& v : lw) v /= z;
  return lw;
}

}  // namespace

std::vector<double> calibrate_label_model(const CoocSpec& spec) {
  spec.validate();
  const int C = spec.classes;
  std::vector<double> theta(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) theta[static_cast<std::size_t>(c)] = logit(spec.marginals[static_cast<std::size_t>(c)]);
  constexpr int kMaxIterations = 20000;
  constexpr double kTolerance = 1e-12;
  double worst = 0.0;
  for (int it = 0; it < kMaxIterations; ++it) {
    const auto p = state_probabilities(spec, theta);
    std::vector<double> marg(static_cast<std::size_t>(C), 0.0);
    for (std::size_t s = 0; s < p.size(); ++s)
      for (int c = 0; c < C; ++c)
        if (s >> c & 1) marg[static_cast<std::size_t>(c)] += p[s];
    worst = 0.0;
    for (int c = 0; c < C; ++c) {
      const auto k = static_cast<std::size_t>(c);
      const double m = std::clamp(marg[k], 1e-300, 1.0 - 1e-16);
      worst = std::max(worst, std::abs(m - spec.marginals[k]));
      theta[k] += logit(spec.marginals[k]) - logit(m);
      if (!std::isfinite(theta[k]) || std::abs(theta[k]) > 700.0)
        throw GenerationError("synthetic: marginals are unreachable under the given pair boosts (class " +
                              std::to_string(c) + ")");
    }
    if (worst < kTolerance) return theta;
  }
  throw GenerationError("synthetic: marginal calibration did not converge (max deviation " + std::to_string(worst) +
                        "); the requested marginals and pair boosts are jointly infeasible");
}

Mat class_template(int class_index, int classes, int image_size) {
  constexpr double kPi = 3.14159265358979323846;
  const double centre = (image_size - 1) / 2.0;
  const double radius = 0.3 * image_size;
  const double angle = 2.0 * kPi * class_index / std::max(classes, 1);
  const double cy = centre + radius * std::sin(angle);
  const double cx = centre + radius * std::cos(angle);
  const double sigma = std::max(1.0, image_size / 10.0);
  Mat t(image_size, image_size);
  for (int r = 0; r < image_size; ++r)
    for (int c = 0; c < image_size; ++c)
      t(r, c) = std::exp(-((r - cy) * (r - cy) + (c - cx) * (c - cx)) / (2.0 * sigma * sigma));
  return t;
}

SyntheticSet synth_generate(const CoocSpec& spec, std::int64_t n) {
  if (n <= 0) throw ConfigError("synthetic: sample count must be positive");
  const auto theta = calibrate_label_model(spec);
  const auto probs = state_probabilities(spec, theta);
  std::vector<double> cdf(probs.size());
  std::partial_sum(probs.begin(), probs.end(), cdf.begin());

  const int C = spec.classes;
  std::vector<Mat> templates;
  for (int c = 0; c < C; ++c) templates.push_back(class_template(c, C, spec.image_size));

  SyntheticSet set;
  for (int c = 0; c < C; ++c) set.manifest.class_names.push_back("class_" + std::to_string(c));
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::int64_t patients = spec.patients > 0 ? spec.patients : n;
  std::uniform_int_distribution<std::int64_t> pick_patient(0, patients - 1);

  set.examples.reserve(static_cast<std::size_t>(n));
  set.manifest.rows.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = unit(rng) * cdf.back();
    const auto state = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    const std::int64_t patient = spec.patients > 0 ? pick_patient(rng) : i;

    LabelVector labels(static_cast<std::size_t>(C));
    Mat img(spec.image_size, spec.image_size);
    for (Eigen::Index k = 0; k < img.size(); ++k) img.data()[k] = spec.noise * gauss(rng);
    for (int c = 0; c < C; ++c) {
      labels[static_cast<std::size_t>(c)] = static_cast<int>(state >> c & 1);
      if (labels[static_cast<std::size_t>(c)]) img += spec.signal_strength * templates[static_cast<std::size_t>(c)];
    }
    const double lo = img.minCoeff(), hi = img.maxCoeff();
    if (hi > lo)
      img = (img.array() - lo) / (hi - lo);
    else
      img.setZero();

    const std::string id = format_id("S", i);
    set.manifest.rows.push_back({id, "images/" + id + ".png", format_id("P", patient), labels});
    set.examples.push_back({id, CxrImage{std::move(img)}, std::move(labels)});
  }
  return set;
}

void export_synthetic(const std::filesystem::path& dir, const SyntheticSet& set) {
  std::filesystem::create_directories(dir / "images");
  for (std::size_t i = 0; i < set.examples.size(); ++i) {
    const auto& px = set.examples[i].image.pixels;
    cv::Mat img(static_cast<int>(px.rows()), static_cast<int>(px.cols()), CV_16UC1);
    for (int r = 0; r < img.rows; ++r)
      for (int c = 0; c < img.cols; ++c)
        img.at<std::uint16_t>(r, c) = static_cast<std::uint16_t>(std::lround(std::clamp(px(r, c), 0.0, 1.0) * 65535.0));
    const auto out = dir / set.manifest.rows[i].image_path;
    if (!cv::imwrite(out.string(), img)) throw IngestionError("cannot write " + out.string());
  }
  write_manifest(dir / "manifest.csv", set.manifest);
}

Dataset load_dataset(const DatasetManifest& manifest, const std::filesystem::path& base_dir, int target) {
  Dataset data;
  data.reserve(manifest.rows.size());
  for (const auto& row : manifest.rows) {
    std::filesystem::path p = row.image_path;
    if (p.is_relative()) p = base_dir / p;
    data.push_back({row.sample_id, preprocess_image(decode_image(p), target), row.labels});
  }
  return data;
}

Dataset select(const Dataset& data, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < data.size(); ++i) index[data[i].sample_id] = i;
  Dataset out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw IntegrityError("sample '" + id + "' is not in the dataset");
    out.push_back(data[it->second]);
  }
  return out;
}

ClassCounts class_counts(const Dataset& data, int classes) {
  ClassCounts cc{std::vector<std::int64_t>(static_cast<std::size_t>(classes), 0), static_cast<std::int64_t>(data.size())};
  for (const auto& e : data)
    for (int c = 0; c < classes; ++c) cc.per_class[static_cast<std::size_t>(c)] += e.labels[static_cast<std::size_t>(c)];
  return cc;
}

}  // namespace hydravit
