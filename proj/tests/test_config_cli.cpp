#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hydravit/cli.hpp"
#include "hydravit/config.hpp"

using namespace hydravit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("hydravit_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "hydravit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

ParseResult parse(std::vector<std::string> args) {
  args.insert(args.begin(), "hydravit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return parse_args(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("reference defaults survive a file round trip") {
  const auto dir = scratch("roundtrip");
  save_experiment((dir / "c.json").string(), ExperimentConfig{});
  const auto back = load_experiment((dir / "c.json").string());
  CHECK(back.train.batch_size == 35);
  CHECK(back.train.learning_rate == 1e-4);
  CHECK(back.train.epochs == 120);
  CHECK(back.model.context.embed_dim == 512);
  CHECK(back.model.context.blocks == 12);
  CHECK(back.model.num_classes == 14);
  CHECK(to_json(back) == to_json(ExperimentConfig{}));
  const auto syn = ExperimentConfig::synthetic_default();
  CHECK(to_json(experiment_from_json(to_json(syn))) == to_json(syn));
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(experiment_from_json({{"train", {{"epoch", 3}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_from_json({{"train", {{"epochs", "three"}}}}), ConfigError);
  auto c = ExperimentConfig{};
  c.train.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.model.num_classes = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("overrides") {
  const auto base = to_json(ExperimentConfig{});
  SUBCASE("bare and dotted keys") {
    auto j = apply_overrides(base, {"epochs=3", "model.variant=no_mbo", "data.manifest=/tmp/x.csv"});
    CHECK(j["train"]["epochs"] == 3);
    CHECK(j["model"]["variant"] == "no_mbo");
    CHECK(j["data"]["manifest"] == "/tmp/x.csv");
  }
  SUBCASE("unknown key") {
    CHECK_THROWS_WITH_AS(apply_overrides(base, {"epochz=3"}), doctest::Contains("epochz"), ConfigError);
  }
  SUBCASE("ambiguous bare key") { CHECK_THROWS_AS(apply_overrides(base, {"seed=3"}), ConfigError); }
  SUBCASE("type change") { CHECK_THROWS_AS(apply_overrides(base, {"epochs=lots"}), ConfigError); }
  SUBCASE("numbers may switch between integer and real") {
    auto j = apply_overrides(base, {"learning_rate=1"});
    CHECK(experiment_from_json(j).train.learning_rate == 1.0);
  }
}

TEST_CASE("effective config differs from the file only where overridden") {
  const auto dir = scratch("diff");
  const auto file = dir / "c.json";
  save_experiment(file.string(), ExperimentConfig::synthetic_default());
  const auto parsed = parse({"train", "--config", file.string(), "--set", "epochs=3"});
  REQUIRE_FALSE(parsed.exit_code);
  CHECK(parsed.config.command == "train");
  const auto effective = to_json(effective_config(parsed.config));
  std::ifstream in(file);
  const auto on_disk = nlohmann::json::parse(in);
  const auto patch = nlohmann::json::diff(on_disk, effective);
  REQUIRE(patch.size() == 1);
  CHECK(patch[0]["path"] == "/train/epochs");
  CHECK(patch[0]["value"] == 3);
}

TEST_CASE("argument parsing") {
  SUBCASE("eval mapping") {
    const auto dir = scratch("eval_args");
    std::ofstream(dir / "p.csv") << "x";
    std::ofstream(dir / "l.csv") << "x";
    const auto r = parse({"eval", "--pred", (dir / "p.csv").string(), "--labels", (dir / "l.csv").string(), "--out",
                          (dir / "r").string()});
    REQUIRE_FALSE(r.exit_code);
    CHECK(r.config.command == "eval");
    CHECK(r.config.pred_path == (dir / "p.csv").string());
    CHECK(r.config.labels_path == (dir / "l.csv").string());
    CHECK(r.config.output_dir == (dir / "r").string());
    CHECK(r.config.tie_mode == "literal");
  }
  SUBCASE("unknown flag") {
    std::string err;
    CHECK(run({"--frobnicate"}, nullptr, &err) == kExitUsage);
    CHECK(err.find("Usage") != std::string::npos);
    CHECK(run({"train", "--frobnicate"}) == kExitUsage);
  }
  SUBCASE("unknown command") { CHECK(run({"serve"}) == kExitUsage); }
  SUBCASE("help") {
    std::string out;
    CHECK(run({"--help"}, &out) == kExitOk);
    CHECK(out.find("train") != std::string::npos);
    CHECK(run({"train", "--help"}) == kExitOk);
  }
  SUBCASE("bad override key") {
    std::string err;
    CHECK(run({"train", "--preset", "synthetic", "--set", "bogus_key=1"}, nullptr, &err) == kExitUsage);
    CHECK(err.find("bogus_key") != std::string::npos);
  }
  SUBCASE("seed flag wins") {
    const auto r = parse({"train", "--preset", "synthetic", "--set", "train.seed=4", "--seed", "9"});
    CHECK(effective_config(r.config).train.seed == 9);
  }
  SUBCASE("invalid variant is a config error") {
    CHECK(run({"ablate", "--preset", "synthetic", "--variants", "full,full"}) == kExitUsage);
    CHECK(run({"ablate", "--preset", "synthetic", "--variants", "full,wide"}) == kExitUsage);
  }
}

TEST_CASE("output root from the environment") {
  RunConfig rc;
  ::setenv(kOutputRootEnv, "/tmp/somewhere", 1);
  CHECK(resolve_output_dir(rc) == "/tmp/somewhere");
  rc.output_dir = "explicit";
  CHECK(resolve_output_dir(rc) == "explicit");
  ::unsetenv(kOutputRootEnv);
  rc.output_dir.clear();
  CHECK(resolve_output_dir(rc) == "hydravit_out");
}

TEST_CASE("content hashes") {
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
}

TEST_CASE("command line end to end") {
  const auto dir = scratch("e2e");
  const std::vector<std::string> common = {"--preset", "synthetic", "--set", "epochs=1", "--set", "synthetic_train=60",
                                           "--set", "synthetic_test=30"};
  auto with = [&](std::vector<std::string> head) {
    head.insert(head.end(), common.begin(), common.end());
    return head;
  };
  std::string out, err;
  REQUIRE(run(with({"train", "-o", (dir / "run").string()}), &out, &err) == kExitOk);
  for (const char* sub : {"checkpoints", "metrics", "reports", "saliency", "plots"}) CHECK(fs::is_directory(dir / "run" / sub));
  CHECK(fs::exists(dir / "run" / "checkpoints" / "full" / "last.ckpt"));
  CHECK(fs::exists(dir / "run" / "reports" / "full" / "config.json"));
  CHECK(fs::exists(dir / "run" / "plots" / "full_roc.png"));

  REQUIRE(run(with({"synth", "-o", (dir / "data").string(), "-n", "90"})) == kExitOk);
  const auto manifest = dir / "data" / "synthetic" / "manifest.csv";
  REQUIRE(fs::exists(manifest));

  CHECK(run({"eval", "--pred", (dir / "run" / "reports" / "full" / "test_predictions.csv").string(), "--labels",
             manifest.string(), "--out", (dir / "eval").string(), "--tie-mode", "conventional"},
            &out, &err) == kExitOk);
  std::ifstream report(dir / "eval" / "reports" / "auc.csv");
  std::string header;
  std::getline(report, header);
  CHECK(header == "class,auc,n_pos,n_neg,tie_mode");

  CHECK(run({"predict", "--checkpoint", (dir / "run" / "checkpoints" / "full" / "last.ckpt").string(), "--manifest",
             manifest.string(), "--saliency", "-k", "2", "-o", (dir / "pred").string()},
            &out, &err) == kExitOk);
  std::ifstream preds(dir / "pred" / "reports" / "predictions.csv");
  std::getline(preds, header);
  CHECK(header == "sample_id,class_name,raw_probability,weighted_score,decision");
  std::size_t rows = 0;
  for (std::string line; std::getline(preds, line);) ++rows;
  CHECK(rows == 90 * 4);
  std::size_t maps = 0;
  for (const auto& e : fs::directory_iterator(dir / "pred" / "saliency")) maps += e.path().extension() == ".png";
  CHECK(maps == 90);

  CHECK(run({"predict", "--checkpoint", (dir / "missing.ckpt").string(), "--manifest", manifest.string()}) == kExitUsage);
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  CHECK(run({"predict", "--checkpoint", (dir / "bad.ckpt").string(), "--manifest", manifest.string(), "-o",
             (dir / "pred2").string()}) == kExitFailure);
}
