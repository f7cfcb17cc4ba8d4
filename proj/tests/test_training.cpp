#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hydravit/training.hpp"
#include "test_support.hpp"

using namespace hydravit;
namespace fs = std::filesystem;

namespace {

Dataset tiny_set(int n, int classes, std::uint64_t seed) {
  auto spec = CoocSpec::independent(classes, 0.4, 16, seed);
  return synth_generate(spec, n).examples;
}

std::vector<std::vector<double>> snapshot(HydraModel& m) {
  std::vector<std::vector<double>> out;
  visit_parameters(m, [&](const std::string&, std::span<double> s) { out.emplace_back(s.begin(), s.end()); });
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("hydravit_test_training_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig quick_config() {
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 4;
  tc.epochs = 2;
  tc.seed = 5;
  return tc;
}

}  // namespace

TEST_CASE("zero epochs leave the state untouched") {
  auto tc = quick_config();
  tc.epochs = 0;
  auto st = init_train_state(ModelConfig::miniature(3), tc);
  const auto before = snapshot(st.model);
  train(st, tc, tiny_set(4, 3, 1));
  CHECK(snapshot(st.model) == before);
  CHECK(st.history.empty());
  CHECK(st.step == 0);
}

TEST_CASE("zero gradient is a fixed point of the update") {
  // All-negative labels with zero branch weights: every weighted probability already sits on
  // the clamp floor it is pulled towards, and alpha = beta makes the consistency term vanish.
  auto mc = ModelConfig::miniature(3);
  mc.variant = Variant::kNoInit;
  auto tc = quick_config();
  auto st = init_train_state(mc, tc);
  st.model.weights.beta = st.model.weights.alpha;
  const auto before = snapshot(st.model);
  auto batch = tiny_set(4, 3, 2);
  for (auto& e : batch) std::fill(e.labels.begin(), e.labels.end(), 0);
  const auto loss = train_step(st, tc, batch);
  CHECK(loss.consistency == 0.0);
  const auto after = snapshot(st.model);
  double worst = 0.0;
  for (std::size_t k = 0; k < before.size(); ++k)
    for (std::size_t i = 0; i < before[k].size(); ++i) worst = std::max(worst, std::abs(after[k][i] - before[k][i]));
  CHECK(worst < 1e-9);
}

TEST_CASE("zero-initialized branch weights still learn") {
  auto mc = ModelConfig::miniature(3);
  mc.variant = Variant::kNoInit;
  auto tc = quick_config();
  auto st = init_train_state(mc, tc);
  auto batch = tiny_set(6, 3, 4);
  for (auto& e : batch) e.labels = {1, 0, 1};
  for (int s = 0; s < 5; ++s) train_step(st, tc, batch);
  CHECK(st.model.weights.w[0] > 0.0);
  CHECK(st.model.weights.w[2] > 0.0);
  CHECK(st.model.weights.w_aggregate > 0.0);
}

TEST_CASE("one step moves every parameter group") {
  auto tc = quick_config();
  auto st = init_train_state(ModelConfig::miniature(3), tc);
  std::vector<std::pair<std::string, std::vector<double>>> before;
  visit_parameters(st.model, [&](const std::string& n, std::span<double> s) { before.emplace_back(n, std::vector<double>(s.begin(), s.end())); });
  train_step(st, tc, tiny_set(6, 3, 3));
  std::size_t k = 0;
  visit_parameters(st.model, [&](const std::string& n, std::span<double> s) {
    CAPTURE(n);
    CHECK(std::vector<double>(s.begin(), s.end()) != before[k].second);
    ++k;
  });
  CHECK(st.step == 1);
}

TEST_CASE("small learning rate descends on a fixed batch") {
  auto tc = quick_config();
  tc.learning_rate = 1e-5;
  auto st = init_train_state(ModelConfig::miniature(3), tc);
  const auto batch = tiny_set(6, 3, 4);
  const double initial = train_step(st, tc, batch).total;
  double last = initial;
  for (int s = 0; s < 50; ++s) last = train_step(st, tc, batch).total;
  CHECK(last < initial);
}

TEST_CASE("re-execution is bitwise reproducible") {
  auto tc = quick_config();
  const auto data = tiny_set(10, 3, 5);
  auto a = init_train_state(ModelConfig::miniature(3), tc);
  auto b = init_train_state(ModelConfig::miniature(3), tc);
  train(a, tc, data);
  train(b, tc, data);
  CHECK(snapshot(a.model) == snapshot(b.model));
  CHECK(snapshot(a.adam_v) == snapshot(b.adam_v));
  REQUIRE(a.history.size() == 2);
  CHECK(a.history[1].loss.total == b.history[1].loss.total);
}

TEST_CASE("non-finite parameters are reported by name") {
  auto tc = quick_config();
  auto st = init_train_state(ModelConfig::miniature(3), tc);
  st.model.heads.individual[1].bias = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(train_step(st, tc, tiny_set(2, 3, 6)), doctest::Contains("outputs.individual"), NonFiniteError);
}

TEST_CASE("empty batch is rejected") {
  auto tc = quick_config();
  auto st = init_train_state(ModelConfig::miniature(3), tc);
  CHECK_THROWS_AS(train_step(st, tc, Dataset{}), ArgumentError);
}

TEST_CASE("checkpoints") {
  const auto dir = scratch("ckpt");
  auto tc = quick_config();
  auto st = init_train_state(ModelConfig::miniature(3), tc);
  train(st, tc, tiny_set(8, 3, 7));
  save_checkpoint(dir / "a.ckpt", st, tc, {"x", "y", "z"});
  CHECK_FALSE(fs::exists(dir / "a.ckpt.tmp"));

  SUBCASE("round trip reproduces forward outputs bitwise") {
    auto loaded = load_checkpoint(dir / "a.ckpt");
    Rng rng(1);
    const auto img = hydravit::testing::random_image(16, rng);
    const auto x = forward(st.model, img);
    const auto y = forward(loaded.state.model, img);
    CHECK(hydravit::testing::bitwise_equal(x.individual, y.individual));
    CHECK(hydravit::testing::bitwise_equal(x.aggregate, y.aggregate));
    CHECK(loaded.state.step == st.step);
    CHECK(loaded.state.epoch == st.epoch);
    CHECK(loaded.class_names == std::vector<std::string>{"x", "y", "z"});
    CHECK(loaded.state.history.size() == st.history.size());
    CHECK(snapshot(loaded.state.adam_m) == snapshot(st.adam_m));
    // The shuffle stream continues where it stopped.
    CHECK(loaded.state.rng() == st.rng());
  }
  SUBCASE("truncation names the missing section") {
    const auto bytes = slurp(dir / "a.ckpt");
    const auto cut = bytes.find("adam_v");
    REQUIRE(cut != std::string::npos);
    std::ofstream(dir / "cut.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(cut - 4));
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "cut.ckpt"), doctest::Contains("'adam_v'"), CheckpointTruncatedError);
  }
  SUBCASE("version mismatch") {
    auto bytes = slurp(dir / "a.ckpt");
    bytes[8] = 99;
    std::ofstream(dir / "v.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir / "v.ckpt"), CheckpointVersionError);
  }
  SUBCASE("three-class checkpoint into a four-class model") {
    const auto four = ModelConfig::miniature(4);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "a.ckpt", &four), doctest::Contains("heads.individual3"),
                         CheckpointShapeError);
  }
  SUBCASE("not a checkpoint") {
    std::ofstream(dir / "junk.ckpt") << "hello";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), CheckpointError);
  }
}

TEST_CASE("resume continues bitwise") {
  const auto dir = scratch("resume");
  const auto data = tiny_set(10, 3, 8);
  auto tc = quick_config();
  tc.epochs = 4;
  auto straight = init_train_state(ModelConfig::miniature(3), tc);
  TrainHooks h1;
  h1.metrics_csv = dir / "straight.csv";
  train(straight, tc, data, h1);

  auto first = tc;
  first.epochs = 2;
  auto part = init_train_state(ModelConfig::miniature(3), first);
  TrainHooks h2;
  h2.checkpoint_dir = dir / "ckpt";
  train(part, first, data, h2);
  auto resumed = load_checkpoint(dir / "ckpt" / "last.ckpt").state;
  TrainHooks h3;
  h3.metrics_csv = dir / "resumed.csv";
  train(resumed, tc, data, h3);
  CHECK(slurp(dir / "straight.csv") == slurp(dir / "resumed.csv"));
  CHECK(snapshot(resumed.model) == snapshot(straight.model));
}

TEST_CASE("metrics csv layout and validation checkpoint") {
  const auto dir = scratch("metrics");
  auto tc = quick_config();
  const auto data = tiny_set(12, 3, 9);
  const auto val = tiny_set(12, 3, 10);
  auto st = init_train_state(ModelConfig::miniature(3), tc);
  TrainHooks h;
  h.metrics_csv = dir / "m.csv";
  h.checkpoint_dir = dir / "ckpt";
  h.validation = &val;
  h.class_names = {"a", "b", "c"};
  train(st, tc, data, h);
  std::ifstream in(dir / "m.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "epoch,bce_mean,mlce,consistency,total,alpha,beta,w_min,w_max,val_auc");
  CHECK(row.rfind("1,", 0) == 0);
  CHECK(row.back() != ',');
  CHECK(fs::exists(dir / "ckpt" / "best.ckpt"));
  CHECK(fs::exists(dir / "ckpt" / "last.ckpt"));
  for (const auto& e : st.history) {
    CHECK(std::abs(e.loss.total - (e.loss.bce_mean + e.loss.mlce + e.loss.consistency)) < 1e-9);
  }
}
