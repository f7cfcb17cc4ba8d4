#include "hydravit/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "hydravit/experiment.hpp"

namespace hydravit {
namespace {

void add_config_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--config", rc.config_path, "experiment config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--preset", rc.preset, "defaults when no config file is given")
      ->check(CLI::IsMember({"reference", "synthetic"}));
  cmd->add_option("--set", rc.overrides, "override a config key: key=value (repeatable)")->take_all();
  cmd->add_option("--seed", rc.seed, "training seed (overrides train.seed)");
  cmd->add_option("--output-dir,-o", rc.output_dir, std::string("artifact root (default $") + kOutputRootEnv + ")");
}

std::vector<std::string> split_commas(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    for (std::string part; std::getline(ss, part, ',');)
      if (!part.empty()) out.push_back(part);
  }
  return out;
}

struct PredictionTable {
  std::vector<std::string> ids;
  std::vector<std::string> classes;
  std::map<std::string, std::map<std::string, double>> scores;  // id -> class -> score
};

PredictionTable read_predictions(const std::string& path, const std::string& column) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predictions " + path);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) header.push_back(f);
  }
  auto col = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError(path + ": predictions lack column '" + name + "'");
  };
  const auto id_col = col("sample_id"), class_col = col("class_name"), score_col = col(column);
  PredictionTable t;
  std::set<std::string> seen_ids, seen_classes;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (f.size() < header.size()) throw std::runtime_error(path + ": line " + std::to_string(line_no) + " is short");
    const auto& id = f[id_col];
    const auto& cls = f[class_col];
    if (seen_ids.insert(id).second) t.ids.push_back(id);
    if (seen_classes.insert(cls).second) t.classes.push_back(cls);
    t.scores[id][cls] = std::stod(f[score_col]);
  }
  return t;
}

int cmd_train(const RunConfig& rc, const ExperimentConfig& cfg, std::ostream& out) {
  const auto dirs = OutputDirs::create(resolve_output_dir(rc));
  std::ofstream(dirs.root / "config.json") << to_json(cfg).dump(2) << '\n';
  const auto data = prepare_data(cfg, &out);
  const auto summary = run_experiment(cfg, data, dirs, to_string(cfg.model.variant), rc.resume, &out);
  out << "config hash " << summary.config_hash << "\nsplit hash " << summary.split_hash << '\n';
  return kExitOk;
}

int cmd_ablate(const RunConfig& rc, const ExperimentConfig& cfg, std::ostream& out) {
  const auto dirs = OutputDirs::create(resolve_output_dir(rc));
  std::ofstream(dirs.root / "config.json") << to_json(cfg).dump(2) << '\n';
  auto variants = split_commas(rc.variants);
  if (variants.empty()) variants = {"full", "no_mbo", "no_ce", "no_aggregate", "no_init"};
  parse_variant_grid(variants);
  const auto result = run_ablation(cfg, variants, dirs, &out);
  std::ifstream table(result.table_csv);
  out << table.rdbuf();
  return kExitOk;
}

int cmd_synth(const RunConfig& rc, const ExperimentConfig& cfg, std::ostream& out) {
  const std::filesystem::path dir = std::filesystem::path(resolve_output_dir(rc)) / "synthetic";
  const std::int64_t n = rc.count > 0 ? rc.count : cfg.data.synthetic_train + cfg.data.synthetic_test;
  cfg.data.synthetic.validate();
  const auto set = synth_generate(cfg.data.synthetic, n);
  export_synthetic(dir, set);
  std::ofstream(dir / "spec.json") << to_json(cfg.data.synthetic).dump(2) << '\n';
  out << "wrote " << n << " samples to " << (dir / "manifest.csv").string() << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& rc, std::ostream& out) {
  const auto preds = read_predictions(rc.pred_path, rc.score_column);
  const auto mode = parse_tie_mode(rc.tie_mode);
  const auto manifest = load_manifest(rc.labels_path, preds.classes);
  std::map<std::string, const ManifestRow*> rows;
  for (const auto& r : manifest.rows) rows[r.sample_id] = &r;

  const std::size_t C = preds.classes.size();
  std::vector<std::vector<double>> s(C);
  std::vector<std::vector<int>> y(C);
  for (const auto& id : preds.ids) {
    auto it = rows.find(id);
    if (it == rows.end()) throw std::runtime_error("sample '" + id + "' has predictions but no labels");
    for (std::size_t c = 0; c < C; ++c) {
      auto sc = preds.scores.at(id).find(preds.classes[c]);
      if (sc == preds.scores.at(id).end())
        throw std::runtime_error("sample '" + id + "' lacks a score for class '" + preds.classes[c] + "'");
      s[c].push_back(sc->second);
      y[c].push_back(it->second->labels[c]);
    }
  }
  const auto dirs = OutputDirs::create(resolve_output_dir(rc));
  const auto report = macro_report(s, y, preds.classes, mode);
  write_report_csv(dirs.reports / "auc.csv", report);
  std::vector<std::pair<std::string, RocCurve>> curves;
  for (std::size_t c = 0; c < C; ++c) {
    if (std::find(report.excluded.begin(), report.excluded.end(), preds.classes[c]) != report.excluded.end()) continue;
    auto roc = roc_points(s[c], y[c]);
    write_roc_csv(dirs.reports / "roc" / (preds.classes[c] + ".csv"), roc);
    curves.emplace_back(preds.classes[c], std::move(roc));
  }
  write_roc_plot(dirs.plots / "roc.png", curves, "");
  for (const auto& c : report.per_class) out << c.name << ' ' << c.auc << '\n';
  for (const auto& name : report.excluded) out << name << " excluded (single label value)\n";
  out << "macro " << report.macro_mean << " +/- " << report.macro_std << " (" << to_string(mode) << ")\n";
  return kExitOk;
}

int cmd_predict(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.checkpoint.empty()) throw ConfigError("predict needs --checkpoint");
  if (rc.images.empty() == rc.manifest.empty()) throw ConfigError("predict needs exactly one of --image or --manifest");
  const auto ckpt = load_checkpoint(rc.checkpoint);
  const auto& model = ckpt.state.model;
  const int C = model.config.num_classes;
  std::vector<std::string> names = ckpt.class_names;
  if (static_cast<int>(names.size()) != C) {
    names.clear();
    for (int c = 0; c < C; ++c) names.push_back("class_" + std::to_string(c));
  }

  std::vector<std::string> ids;
  std::vector<std::filesystem::path> paths;
  if (!rc.manifest.empty()) {
    const auto m = load_manifest(rc.manifest, names);
    for (const auto& r : m.rows) {
      ids.push_back(r.sample_id);
      std::filesystem::path p = r.image_path;
      paths.push_back(p.is_relative() ? std::filesystem::path(rc.manifest).parent_path() / p : p);
    }
  } else {
    for (const auto& img : rc.images) {
      ids.push_back(std::filesystem::path(img).stem().string());
      paths.emplace_back(img);
    }
  }

  const auto dirs = OutputDirs::create(resolve_output_dir(rc));
  Mat raw(static_cast<Eigen::Index>(ids.size()), C), weighted(static_cast<Eigen::Index>(ids.size()), C);
  std::ofstream top(dirs.reports / "top_k.csv");
  top << "sample_id,rank,class_name,weighted_score\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto image = preprocess_image(decode_image(paths[i]), model.config.spatial.input_size);
    const auto outputs = forward(model, image);
    const Vec scores = inference_scores(model, outputs);
    raw.row(static_cast<Eigen::Index>(i)) = (outputs.individual.size() ? outputs.individual : outputs.aggregate).transpose();
    weighted.row(static_cast<Eigen::Index>(i)) = scores.transpose();
    const auto ranked = rank_scores(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), rc.top_k);
    if (rc.top_k > C && i == 0) err << "warning: top-k " << rc.top_k << " exceeds " << C << " classes; using " << C << '\n';
    for (std::size_t r = 0; r < ranked.size(); ++r)
      top << ids[i] << ',' << r + 1 << ',' << names[static_cast<std::size_t>(ranked[r].class_index)] << ','
          << ranked[r].score << '\n';
    if (rc.saliency && !ranked.empty()) {
      const int target = ranked.front().class_index;
      const auto map = gradcam_saliency(model, image, target);
      write_saliency(dirs.saliency / (ids[i] + "_" + names[static_cast<std::size_t>(target)] + ".png"), map,
                     names[static_cast<std::size_t>(target)]);
    }
  }
  write_predictions_csv(dirs.reports / "predictions.csv", ids, names, raw, weighted, rc.threshold);
  out << "wrote " << (dirs.reports / "predictions.csv").string() << '\n';
  return kExitOk;
}

}  // namespace

std::string resolve_output_dir(const RunConfig& run) {
  if (!run.output_dir.empty()) return run.output_dir;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "hydravit_out";
}

ParseResult parse_args(int argc, const char* const* argv) {
  ParseResult result;
  RunConfig& rc = result.config;
  CLI::App app{"Multi-label chest X-ray classifier: training, evaluation and experiments", "hydravit"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train one model and evaluate it on the test split");
  add_config_options(train, rc);
  train->add_flag("--resume", rc.resume, "continue from checkpoints/<variant>/last.ckpt");

  auto* ablate = app.add_subcommand("ablate", "train and compare a grid of architecture variants");
  add_config_options(ablate, rc);
  ablate->add_option("--variants", rc.variants, "comma-separated variant names")->take_all();

  auto* synth = app.add_subcommand("synth", "write a synthetic labelled image set");
  add_config_options(synth, rc);
  synth->add_option("--count,-n", rc.count, "number of samples")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "AUC report from a predictions CSV and a label manifest");
  eval->add_option("--pred", rc.pred_path, "predictions CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--labels", rc.labels_path, "label manifest CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--out,--output-dir,-o", rc.output_dir, "artifact root");
  eval->add_option("--tie-mode", rc.tie_mode, "literal or conventional")->check(CLI::IsMember({"literal", "conventional"}));
  eval->add_option("--score", rc.score_column, "score column")
      ->check(CLI::IsMember({"weighted_score", "raw_probability"}));

  auto* predict = app.add_subcommand("predict", "score images with a trained checkpoint");
  predict->add_option("--checkpoint", rc.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  predict->add_option("--image", rc.images, "image file (repeatable)")->check(CLI::ExistingFile);
  predict->add_option("--manifest", rc.manifest, "manifest CSV of images")->check(CLI::ExistingFile);
  predict->add_option("--top-k,-k", rc.top_k, "labels listed per image")->check(CLI::PositiveNumber);
  predict->add_option("--threshold", rc.threshold, "decision threshold on the weighted score");
  predict->add_flag("--saliency", rc.saliency, "write a GradCAM map for the top-ranked class");
  predict->add_option("--output-dir,-o", rc.output_dir, "artifact root");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    result.exit_code = kExitOk;
    result.message = app.help();
    return result;
  } catch (const CLI::CallForAllHelp&) {
    result.exit_code = kExitOk;
    result.message = app.help("", CLI::AppFormatMode::All);
    return result;
  } catch (const CLI::ParseError& e) {
    result.exit_code = kExitUsage;
    result.message = std::string("error: ") + e.what() + "\n\n" + app.help();
    return result;
  }
  for (auto* sub : app.get_subcommands()) rc.command = sub->get_name();
  return result;
}

ExperimentConfig effective_config(const RunConfig& run) {
  nlohmann::json j;
  if (!run.config_path.empty()) {
    j = to_json(load_experiment(run.config_path));
  } else if (run.preset == "synthetic") {
    j = to_json(ExperimentConfig::synthetic_default());
  } else {
    j = to_json(ExperimentConfig{});
  }
  j = apply_overrides(j, run.overrides);
  auto cfg = experiment_from_json(j);
  if (run.seed) cfg.train.seed = *run.seed;
  cfg.validate();
  return cfg;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const auto parsed = parse_args(argc, argv);
  if (parsed.exit_code) {
    (*parsed.exit_code == kExitOk ? out : err) << parsed.message;
    return *parsed.exit_code;
  }
  const RunConfig& rc = parsed.config;
  try {
    if (rc.command == "eval") return cmd_eval(rc, out);
    if (rc.command == "predict") return cmd_predict(rc, out, err);
    const auto cfg = effective_config(rc);
    if (rc.command == "train") return cmd_train(rc, cfg, out);
    if (rc.command == "ablate") return cmd_ablate(rc, cfg, out);
    if (rc.command == "synth") return cmd_synth(rc, cfg, out);
    err << "error: unknown command '" << rc.command << "'\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace hydravit
