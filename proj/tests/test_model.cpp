#include <iostream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "hydravit/model.hpp"
#include "test_support.hpp"

using namespace hydravit;
using hydravit::testing::random_image;

namespace {

std::vector<hydravit::testing::Sample> make_batch(int n, int classes, int size, Rng& rng) {
  std::vector<hydravit::testing::Sample> batch;
  std::bernoulli_distribution bit(0.4);
  for (int i = 0; i < n; ++i) {
    hydravit::testing::Sample s{random_image(size, rng), {}};
    for (int c = 0; c < classes; ++c) s.labels.push_back(bit(rng) ? 1.0 : 0.0);
    batch.push_back(std::move(s));
  }
  return batch;
}

ModelConfig gradcheck_config(Variant v) {
  auto cfg = ModelConfig::miniature(3);
  cfg.variant = v;
  return cfg;
}

}  // namespace

TEST_CASE("backprop matches central differences for every variant") {
  for (const auto v : {Variant::kFull, Variant::kNoMbo, Variant::kNoCe, Variant::kNoAggregate,
                       Variant::kAggregatedOnly}) {
    CAPTURE(to_string(v));
    Rng rng(100 + static_cast<int>(v));
    const auto cfg = gradcheck_config(v);
    ClassCounts counts{{40, 50, 60}, 150};
    const auto model = build_model(cfg, rng, &counts);
    auto batch = make_batch(2, 3, 16, rng);
    while (hydravit::testing::touches_clamp(model, batch)) batch = make_batch(2, 3, 16, rng);
    const auto entries = hydravit::testing::check_gradients(model, batch, 40, rng);
    for (const auto& e : entries) {
      CAPTURE(e.name);
      CAPTURE(e.index);
      CAPTURE(e.analytic);
      CAPTURE(e.numeric);
      if (v == Variant::kNoMbo && e.name.rfind("adaptive.", 0) == 0) {
        CHECK(e.analytic == 0.0);
        continue;
      }
      CHECK(e.relative_error < 1e-4);
    }
  }
}

TEST_CASE("variant head layouts") {
  Rng rng(1);
  const auto img = random_image(16, rng);
  SUBCASE("full") {
    const auto m = build_model(ModelConfig::miniature(4), rng);
    const auto out = forward(m, img);
    CHECK(out.individual.size() == 4);
    CHECK(out.aggregate.size() == 4);
    CHECK(m.heads.input_width == 4 * 32);
  }
  SUBCASE("no_mbo uses a softmax over classes") {
    auto cfg = ModelConfig::miniature(4);
    cfg.variant = Variant::kNoMbo;
    const auto m = build_model(cfg, rng);
    const auto out = forward(m, img);
    CHECK(out.individual.size() == 0);
    CHECK(out.aggregate.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("no_ce feeds the flattened feature map") {
    auto cfg = ModelConfig::miniature(4);
    cfg.variant = Variant::kNoCe;
    const auto m = build_model(cfg, rng);
    CHECK(m.heads.input_width == 4 * 4 * 16);
    CHECK(m.context.blocks.empty());
    CHECK(forward(m, img).individual.size() == 4);
  }
  SUBCASE("feature-map head input mirrors the r*r*z width") {
    auto cfg = ModelConfig::miniature(4);
    cfg.head_input = HeadInput::kFeatureMap;
    CHECK(cfg.head_input_width() == 256);
    CHECK(ModelConfig::reference_default().head_input_width() == 2048);
    auto full = ModelConfig::reference_default();
    full.head_input = HeadInput::kFeatureMap;
    CHECK(full.head_input_width() == 25088);
  }
  SUBCASE("no_init zeroes the branch weights") {
    auto cfg = ModelConfig::miniature(4);
    cfg.variant = Variant::kNoInit;
    const auto m = build_model(cfg, rng);
    CHECK(m.weights.w.isZero(0.0));
    CHECK(m.weights.w_aggregate == 0.0);
  }
  SUBCASE("unknown variant name") { CHECK_THROWS_AS(parse_variant("bogus"), ConfigError); }
}

TEST_CASE("build_model applies class-ratio initialization") {
  Rng rng(2);
  ClassCounts counts{{10, 20, 40, 80}, 100};
  const auto m = build_model(ModelConfig::miniature(4), rng, &counts);
  for (int c = 0; c < 4; ++c)
    CHECK(m.weights.w[c] * counts.per_class[static_cast<std::size_t>(c)] == doctest::Approx(25.0).epsilon(1e-15));
  CHECK(m.weights.w_aggregate == 1.0 / 5.0);
}

TEST_CASE("visit_parameters covers every parameter exactly once") {
  Rng rng(3);
  const auto m = build_model(ModelConfig::miniature(3), rng);
  std::size_t manual = 0;
  for (const auto& c : m.spatial.convs) manual += static_cast<std::size_t>(c.weight.size() + c.bias.size());
  manual += static_cast<std::size_t>(m.context.projection.size() + m.context.positional.size());
  const auto& b = m.context.blocks[0];
  manual += static_cast<std::size_t>(4 * b.query.size() + 4 * b.query_bias.size() + b.mlp_in.size() +
                                     b.mlp_in_bias.size() + b.mlp_out.size() + b.mlp_out_bias.size() +
                                     4 * b.norm1_gain.size());
  manual += 3 * (128 + 1) + 3 * 128 + 3;
  manual += 3 + 3;
  CHECK(parameter_count(m) == manual);
}
