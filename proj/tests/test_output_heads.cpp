#include "doctest.h"
#include "hydravit/output_heads.hpp"
#include "test_support.hpp"

using namespace hydravit;
using hydravit::testing::random_vec;

TEST_CASE("adaptive weight initialization from class ratios") {
  Rng rng(1);
  SUBCASE("w_A = 1/(C+1) for C = 14") {
    std::vector<std::int64_t> counts(14, 10);
    const auto aw = init_adaptive_weights(counts, 140, 14, rng);
    CHECK(aw.w_aggregate == 1.0 / 15.0);
    CHECK(aw.w_aggregate == doctest::Approx(0.066667).epsilon(1e-5));
  }
  SUBCASE("balanced classes give unit weights") {
    std::vector<std::int64_t> counts(4, 100);
    const auto aw = init_adaptive_weights(counts, 400, 4, rng);
    for (int c = 0; c < 4; ++c) CHECK(aw.w[c] == 1.0);
  }
  SUBCASE("N = 1000, C = 4, N_c = 50 gives 5") {
    std::vector<std::int64_t> counts(4, 50);
    const auto aw = init_adaptive_weights(counts, 1000, 4, rng);
    for (int c = 0; c < 4; ++c) CHECK(aw.w[c] == 5.0);
  }
  SUBCASE("alpha and beta start inside [0, 5]") {
    for (int i = 0; i < 200; ++i) {
      std::vector<std::int64_t> counts{3, 4};
      const auto aw = init_adaptive_weights(counts, 7, 2, rng);
      CHECK(aw.alpha >= 0.0);
      CHECK(aw.alpha <= 5.0);
      CHECK(aw.beta >= 0.0);
      CHECK(aw.beta <= 5.0);
    }
  }
  SUBCASE("w_c * N_c is N / C for every class") {
    std::vector<std::int64_t> counts{7, 130, 2, 55, 19};
    const auto aw = init_adaptive_weights(counts, 180, 5, rng);
    for (int c = 0; c < 5; ++c) CHECK(aw.w[c] * counts[static_cast<std::size_t>(c)] == doctest::Approx(36.0).epsilon(1e-15));
  }
  SUBCASE("an empty class is an initialization error") {
    std::vector<std::int64_t> counts{5, 0, 3};
    CHECK_THROWS_WITH_AS(init_adaptive_weights(counts, 8, 3, rng), doctest::Contains("class 1"),
                         InitializationError);
  }
}

TEST_CASE("zero heads emit exactly one half") {
  Rng rng(2);
  auto p = build_output_heads(6, 3, {}, rng);
  for (auto& h : p.individual) h.weight.setZero();
  p.aggregate_weight.setZero();
  const auto out = forward_branches(random_vec(6, rng), p);
  REQUIRE(out.individual.size() == 3);
  REQUIRE(out.aggregate.size() == 3);
  for (int c = 0; c < 3; ++c) {
    CHECK(out.individual[c] == 0.5);
    CHECK(out.aggregate[c] == 0.5);
  }
}

TEST_CASE("branch outputs match an affine-plus-logistic oracle") {
  Rng rng(3);
  auto p = build_output_heads(10, 3, {}, rng);
  for (auto& h : p.individual) h.bias = random_vec(1, rng)[0];
  p.aggregate_bias = random_vec(3, rng);
  const Vec x = random_vec(10, rng);
  const auto out = forward_branches(x, p);
  for (int c = 0; c < 3; ++c) {
    double zi = p.individual[static_cast<std::size_t>(c)].bias, za = p.aggregate_bias[c];
    for (int k = 0; k < 10; ++k) {
      zi += p.individual[static_cast<std::size_t>(c)].weight[k] * x[k];
      za += p.aggregate_weight(c, k) * x[k];
    }
    CHECK(out.individual[c] == doctest::Approx(1.0 / (1.0 + std::exp(-zi))).epsilon(1e-6));
    CHECK(out.aggregate[c] == doctest::Approx(1.0 / (1.0 + std::exp(-za))).epsilon(1e-6));
    CHECK(out.individual[c] >= 0.0);
    CHECK(out.individual[c] <= 1.0);
  }
  CHECK_THROWS_AS(forward_branches(random_vec(9, rng), p), DimensionError);
}

TEST_CASE("perturbing head c changes only output c") {
  Rng rng(4);
  auto p = build_output_heads(8, 4, {}, rng);
  const Vec x = random_vec(8, rng);
  const auto before = forward_branches(x, p);
  p.individual[2].weight[3] += 0.5;
  p.individual[2].bias -= 0.25;
  const auto after = forward_branches(x, p);
  for (int c = 0; c < 4; ++c) {
    if (c == 2)
      CHECK(after.individual[c] != before.individual[c]);
    else
      CHECK(after.individual[c] == before.individual[c]);
    CHECK(after.aggregate[c] == before.aggregate[c]);
  }
}

TEST_CASE("predict_labels ranking and decisions") {
  SUBCASE("hand example: w = (2, 1), y~ = (0.4, 0.6)") {
    BranchOutputs out;
    out.individual = Vec{{0.4, 0.6}};
    AdaptiveWeights w{Vec{{2.0, 1.0}}, 0.3, 1, 1};
    const auto pred = predict_labels(out, w, 2, 0.5);
    CHECK(pred.scores[0] == doctest::Approx(0.8));
    CHECK(pred.scores[1] == doctest::Approx(0.6));
    CHECK(pred.decisions[0]);
    CHECK(pred.decisions[1]);
    REQUIRE(pred.top.size() == 2);
    CHECK(pred.top[0].class_index == 0);
    CHECK(pred.top[1].class_index == 1);
  }
  SUBCASE("equal scores rank by class index") {
    BranchOutputs out;
    out.individual = Vec::Constant(5, 0.3);
    AdaptiveWeights w{Vec::Ones(5), 0.2, 0, 0};
    const auto pred = predict_labels(out, w, 5);
    for (int i = 0; i < 5; ++i) CHECK(pred.top[static_cast<std::size_t>(i)].class_index == i);
    CHECK_FALSE(pred.warning.has_value());
  }
  SUBCASE("top-5 of 14 classes") {
    Rng rng(5);
    BranchOutputs out;
    out.individual = random_vec(14, rng).cwiseAbs().cwiseMin(1.0);
    AdaptiveWeights w{Vec::Ones(14), 1.0 / 15, 1, 1};
    const auto pred = predict_labels(out, w, 5);
    REQUIRE(pred.top.size() == 5);
    for (std::size_t i = 1; i < 5; ++i) CHECK(pred.top[i - 1].score >= pred.top[i].score);
  }
  SUBCASE("k beyond C is clamped with a warning") {
    BranchOutputs out;
    out.individual = Vec{{0.1, 0.9, 0.5}};
    AdaptiveWeights w{Vec::Ones(3), 0.25, 1, 1};
    const auto pred = predict_labels(out, w, 7);
    CHECK(pred.top.size() == 3);
    CHECK(pred.warning.has_value());
  }
  SUBCASE("scores stay in [0, 1] even with large weights") {
    BranchOutputs out;
    out.individual = Vec{{0.9, 0.05}};
    AdaptiveWeights w{Vec{{3.0, -2.0}}, 0.3, 1, 1};
    const auto pred = predict_labels(out, w, 2);
    for (double s : pred.scores) {
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
  }
}

TEST_CASE("common positive scaling of w preserves the ranking when no clamp activates") {
  Rng rng(6);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 100; ++trial) {
    BranchOutputs out;
    out.individual.resize(6);
    AdaptiveWeights w{Vec(6), 0.1, 1, 1};
    for (int c = 0; c < 6; ++c) {
      out.individual[c] = u(rng);
      w.w[c] = u(rng);
    }
    const double scale = 0.5 + 0.4 * u(rng);  // keeps every w_c * y~_c below 1
    AdaptiveWeights scaled = w;
    scaled.w *= scale;
    const auto a = predict_labels(out, w, 6);
    const auto b = predict_labels(out, scaled, 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(a.top[i].class_index == b.top[i].class_index);
  }
}
