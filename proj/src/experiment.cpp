#include "hydravit/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

namespace hydravit {
namespace {

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void say(std::ostream* log, const std::string& line) {
  if (log) *log << line << std::endl;
}

Dataset single_label(const Dataset& data, int c) {
  Dataset out;
  out.reserve(data.size());
  for (const auto& e : data) out.push_back({e.sample_id, e.image, {e.labels[static_cast<std::size_t>(c)]}});
  return out;
}

struct Trained {
  TrainState state;
  std::string config_hash;
};

Trained train_one(const ExperimentConfig& cfg, const Dataset& train_set, const std::vector<std::string>& names,
                  const Dataset& validation, const std::filesystem::path& ckpt_dir,
                  const std::filesystem::path& metrics_csv, bool resume,
                  std::ostream* log, const std::string& tag, bool class_ratio_init = true) {
  const auto hash = config_hash(to_json(cfg));
  WeightBundle bundle;
  if (!cfg.spatial_weights.empty()) bundle = read_weight_bundle(cfg.spatial_weights);
  const WeightBundle* bundle_ptr = cfg.spatial_weights.empty() ? nullptr : &bundle;

  Trained t;
  t.config_hash = hash;
  const auto last = ckpt_dir / "last.ckpt";
  if (resume && std::filesystem::exists(last)) {
    auto loaded = load_checkpoint(last, &cfg.model);
    t.state = std::move(loaded.state);
    say(log, "[" + tag + "] resuming from epoch " + std::to_string(t.state.epoch));
  } else {
    const auto counts = class_counts(train_set, cfg.model.num_classes);
    t.state = init_train_state(cfg.model, cfg.train, class_ratio_init ? &counts : nullptr, bundle_ptr);
  }
  TrainHooks hooks;
  hooks.class_names = names;
  hooks.validation = &validation;
  hooks.checkpoint_dir = ckpt_dir;
  hooks.metrics_csv = metrics_csv;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    say(log, "[" + tag + "] epoch " + std::to_string(m.epoch) + " loss " + fixed(m.loss.total, 6) + " (bce " +
                 fixed(m.loss.bce_mean, 4) + ", mlce " + fixed(m.loss.mlce, 4) + ", cl " + fixed(m.loss.consistency, 4) +
                 ") alpha " + fixed(m.alpha, 3) + " beta " + fixed(m.beta, 3));
  };
  train(t.state, cfg.train, train_set, hooks);
  if (cfg.train.epochs == 0 && !ckpt_dir.empty()) save_checkpoint(last, t.state, cfg.train, names);
  return t;
}

}  // namespace

OutputDirs OutputDirs::create(const std::filesystem::path& root) {
  OutputDirs d{root, root / "checkpoints", root / "metrics", root / "reports", root / "saliency", root / "plots"};
  for (const auto& p : {d.checkpoints, d.metrics, d.reports, d.saliency, d.plots}) std::filesystem::create_directories(p);
  return d;
}

PreparedData prepare_data(const ExperimentConfig& config, std::ostream* log) {
  config.validate();
  PreparedData out;
  Dataset all;
  if (config.data.source == "synthetic") {
    auto set = synth_generate(config.data.synthetic, config.data.synthetic_train + config.data.synthetic_test);
    out.manifest = std::move(set.manifest);
    all = std::move(set.examples);
  } else {
    if (config.data.manifest.empty()) throw ConfigError("data.manifest is required when data.source is 'manifest'");
    out.manifest = load_manifest(config.data.manifest, config.data.class_names);
    const std::filesystem::path root = config.data.image_root.empty()
                                           ? std::filesystem::path(config.data.manifest).parent_path()
                                           : std::filesystem::path(config.data.image_root);
    all = load_dataset(out.manifest, root, config.model.spatial.input_size);
  }
  out.class_names = out.manifest.class_names;

  if (!config.data.split_file.empty()) {
    out.split = read_split_csv(config.data.split_file, out.manifest);
  } else {
    const double fraction = config.data.source == "synthetic"
                                ? static_cast<double>(config.data.synthetic_test) /
                                      static_cast<double>(config.data.synthetic_train + config.data.synthetic_test)
                                : config.data.test_fraction;
    out.split = patient_split(out.manifest, fraction, config.data.split_seed);
  }
  if (out.split.warning) say(log, "warning: " + *out.split.warning);
  out.train = select(all, out.split.train_ids);
  out.test = select(all, out.split.test_ids);
  if (config.data.validation_fraction > 0.0) {
    DatasetManifest train_rows{out.manifest.class_names, {}};
    const std::set<std::string> ids(out.split.train_ids.begin(), out.split.train_ids.end());
    for (const auto& r : out.manifest.rows)
      if (ids.count(r.sample_id)) train_rows.rows.push_back(r);
    const auto inner = patient_split(train_rows, config.data.validation_fraction, config.data.split_seed + 1);
    out.validation = select(all, inner.test_ids);
    out.train = select(all, inner.train_ids);
  }
  say(log, "split: " + std::to_string(out.train.size()) + " train / " + std::to_string(out.validation.size()) +
               " validation / " + std::to_string(out.test.size()) +
               " test (test fraction " + fixed(out.split.achieved_test_fraction, 4) + ")");
  return out;
}

void write_predictions_csv(const std::filesystem::path& path, const std::vector<std::string>& sample_ids,
                           const std::vector<std::string>& class_names, const Mat& raw, const Mat& weighted,
                           double threshold) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "sample_id,class_name,raw_probability,weighted_score,decision\n";
  for (std::size_t i = 0; i < sample_ids.size(); ++i)
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto k = static_cast<Eigen::Index>(c);
      out << sample_ids[i] << ',' << class_names[c] << ',' << g17(raw(r, k)) << ',' << g17(weighted(r, k)) << ','
          << (weighted(r, k) >= threshold ? 1 : 0) << '\n';
    }
}

RunSummary run_experiment(const ExperimentConfig& config, const PreparedData& data, const OutputDirs& dirs,
                          const std::string& tag, bool resume, std::ostream* log) {
  config.validate();
  const auto report_dir = dirs.reports / tag;
  std::filesystem::create_directories(report_dir);
  write_split_csv(report_dir / "split.csv", data.split);

  RunSummary summary;
  summary.tag = tag;
  summary.split_hash = git_blob_hash_file((report_dir / "split.csv").string());
  summary.config_hash = config_hash(to_json(config));
  {
    const nlohmann::json snapshot{{"config", to_json(config)},
                                  {"config_hash", summary.config_hash},
                                  {"split_hash", summary.split_hash},
                                  {"tag", tag}};
    std::ofstream(report_dir / "config.json") << snapshot.dump(2) << '\n';
  }

  const auto C = static_cast<Eigen::Index>(data.class_names.size());
  const auto N = static_cast<Eigen::Index>(data.test.size());
  summary.test_scores = Mat(N, C);
  summary.test_raw = Mat(N, C);

  if (config.model.variant == Variant::kEnsemblePerLabel) {
    ExperimentConfig member = config;
    member.model.variant = Variant::kNoAggregate;
    member.model.num_classes = 1;
    member.data.source = "manifest";  // only the model shape matters from here on
    member.data.class_names = {"member"};
    for (Eigen::Index c = 0; c < C; ++c) {
      const std::string name = data.class_names[static_cast<std::size_t>(c)];
      const auto member_train = single_label(data.train, static_cast<int>(c));
      const auto member_val = single_label(data.validation, static_cast<int>(c));
      auto t = train_one(member, member_train, {name}, member_val, dirs.checkpoints / tag / ("class" + std::to_string(c)),
                         dirs.metrics / (tag + "_class" + std::to_string(c) + ".csv"), resume, log,
                         tag + "/" + name, /*class_ratio_init=*/false);
      for (Eigen::Index i = 0; i < N; ++i) {
        const auto out = forward(t.state.model, data.test[static_cast<std::size_t>(i)].image);
        summary.test_scores(i, c) = inference_scores(t.state.model, out)[0];
        summary.test_raw(i, c) = out.individual[0];
      }
      if (c == 0) summary.history = t.state.history;
    }
  } else {
    auto t = train_one(config, data.train, data.class_names, data.validation, dirs.checkpoints / tag, dirs.metrics / (tag + ".csv"),
                       resume, log, tag);
    summary.history = t.state.history;
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto out = forward(t.state.model, data.test[static_cast<std::size_t>(i)].image);
      summary.test_scores.row(i) = inference_scores(t.state.model, out).transpose();
      summary.test_raw.row(i) = (out.individual.size() > 0 ? out.individual : out.aggregate).transpose();
    }
  }

  std::vector<std::string> ids;
  for (const auto& e : data.test) ids.push_back(e.sample_id);
  write_predictions_csv(report_dir / "test_predictions.csv", ids, data.class_names, summary.test_raw,
                        summary.test_scores);

  std::vector<std::vector<double>> s(static_cast<std::size_t>(C));
  std::vector<std::vector<int>> y(static_cast<std::size_t>(C));
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index i = 0; i < N; ++i) {
      s[static_cast<std::size_t>(c)].push_back(summary.test_scores(i, c));
      y[static_cast<std::size_t>(c)].push_back(data.test[static_cast<std::size_t>(i)].labels[static_cast<std::size_t>(c)]);
    }
  summary.test_report = macro_report(s, y, data.class_names, TieMode::kLiteral);
  write_report_csv(report_dir / "test_auc.csv", summary.test_report);

  std::vector<std::pair<std::string, RocCurve>> curves;
  for (std::size_t c = 0; c < s.size(); ++c) {
    const auto pos = std::count(y[c].begin(), y[c].end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y[c].size())) continue;
    auto roc = roc_points(s[c], y[c]);
    write_roc_csv(report_dir / "roc" / (data.class_names[c] + ".csv"), roc);
    curves.emplace_back(data.class_names[c], std::move(roc));
  }
  write_roc_plot(dirs.plots / (tag + "_roc.png"), curves, tag);
  say(log, "[" + tag + "] test macro AUC " + fixed(summary.test_report.macro_mean, 4) + " +/- " +
               fixed(summary.test_report.macro_std, 4) + " (" + to_string(summary.test_report.tie_mode) + ")");
  return summary;
}

std::string to_string(Subset s) {
  switch (s) {
    case Subset::kSingle: return "single";
    case Subset::kMultiple: return "multiple";
    case Subset::kAll: return "all";
  }
  return "all";
}

std::vector<std::size_t> subset_indices(const Dataset& test, Subset s) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto n = std::count(test[i].labels.begin(), test[i].labels.end(), 1);
    const bool keep = s == Subset::kAll || n == 0 || (s == Subset::kSingle ? n == 1 : n >= 2);
    if (keep) idx.push_back(i);
  }
  return idx;
}

std::vector<SubsetReport> subset_reports(const Mat& scores, const Dataset& test,
                                         const std::vector<std::string>& class_names, TieMode mode) {
  std::vector<SubsetReport> out;
  for (Subset sub : {Subset::kSingle, Subset::kMultiple, Subset::kAll}) {
    const auto idx = subset_indices(test, sub);
    std::vector<std::vector<double>> s(class_names.size());
    std::vector<std::vector<int>> y(class_names.size());
    for (std::size_t c = 0; c < class_names.size(); ++c)
      for (auto i : idx) {
        s[c].push_back(scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
        y[c].push_back(test[i].labels[c]);
      }
    SubsetReport r;
    r.subset = sub;
    r.samples = idx.size();
    try {
      r.report = macro_report(s, y, class_names, mode);
      r.usable = true;
    } catch (const ReportError&) {
      r.report.tie_mode = mode;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Variant> parse_variant_grid(const std::vector<std::string>& names) {
  if (names.empty()) throw ConfigError("ablation grid is empty");
  std::set<std::string> seen;
  std::vector<Variant> out;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw ConfigError("duplicate variant '" + n + "' in ablation grid");
    out.push_back(parse_variant(n));
  }
  return out;
}

AblationResult run_ablation(const ExperimentConfig& base, const std::vector<std::string>& variants,
                            const OutputDirs& dirs, std::ostream* log) {
  const auto grid = parse_variant_grid(variants);
  const PreparedData data = prepare_data(base, log);
  AblationResult result;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    ExperimentConfig cfg = base;
    cfg.model.variant = grid[k];
    auto run = run_experiment(cfg, data, dirs, variants[k], false, log);
    if (!result.runs.empty() && run.split_hash != result.runs.front().split_hash)
      throw IntegrityError("variant '" + variants[k] + "' saw a different split than '" + result.runs.front().tag + "'");
    result.subsets.push_back(subset_reports(run.test_scores, data.test, data.class_names, TieMode::kLiteral));
    result.runs.push_back(std::move(run));
  }

  result.table_csv = dirs.reports / "table1.csv";
  {
    std::ofstream out(result.table_csv);
    out << "subset";
    for (const auto& v : variants) out << ',' << v;
    out << '\n';
    for (std::size_t s = 0; s < 3; ++s) {
      out << to_string(result.subsets.front()[s].subset);
      for (const auto& per_variant : result.subsets) {
        const auto& r = per_variant[s];
        out << ',';
        if (r.usable) out << fixed(100.0 * r.report.macro_mean, 1) << "±" << fixed(100.0 * r.report.macro_std, 1);
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dirs.reports / "table1_long.csv");
    out << "variant,subset,macro_mean,macro_std,samples,classes,tie_mode,split_hash\n";
    for (std::size_t k = 0; k < result.runs.size(); ++k)
      for (const auto& r : result.subsets[k])
        out << result.runs[k].tag << ',' << to_string(r.subset) << ',' << (r.usable ? g17(r.report.macro_mean) : "")
            << ',' << (r.usable ? g17(r.report.macro_std) : "") << ',' << r.samples << ',' << r.report.per_class.size()
            << ',' << to_string(r.report.tie_mode) << ',' << result.runs[k].split_hash << '\n';
  }
  {
    std::ofstream out(dirs.reports / "per_class_auc.csv");
    out << "class";
    for (const auto& run : result.runs) out << ',' << run.tag;
    out << '\n';
    for (const auto& name : data.class_names) {
      out << name;
      for (const auto& run : result.runs) {
        out << ',';
        for (const auto& c : run.test_report.per_class)
          if (c.name == name) out << g17(c.auc);
      }
      out << '\n';
    }
    out << "macro_mean";
    for (const auto& run : result.runs) out << ',' << g17(run.test_report.macro_mean);
    out << "\nmacro_std";
    for (const auto& run : result.runs) out << ',' << g17(run.test_report.macro_std);
    out << '\n';
  }
  say(log, "ablation table: " + result.table_csv.string());
  return result;
}

}  // namespace hydravit
