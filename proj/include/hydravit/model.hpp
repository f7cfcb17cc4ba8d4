#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hydravit/context_encoder.hpp"
#include "hydravit/losses.hpp"
#include "hydravit/output_heads.hpp"
#include "hydravit/spatial_encoder.hpp"

namespace hydravit {

/// Architecture variants used by the ablation grid.
enum class Variant {
  kFull,            // SE -> CE -> individual + aggregate heads, three-term loss
  kNoMbo,           // SE -> CE -> softmax head
  kNoCe,            // SE -> individual + aggregate heads on the flattened feature map
  kNoAggregate,     // individual heads only, BCE term only
  kNoInit,          // full model with w_c = w_A = 0 at start
  kAggregatedOnly,  // aggregate sigmoid head only, MLCE term only
  kEnsemblePerLabel // one single-head model per class (assembled by the experiment runner)
};

std::string to_string(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(const std::string& name);

enum class HeadInput {
  kEmbeddings,  // flattened context embeddings, N_p * N_D wide
  kFeatureMap,  // flattened spatial feature map, r * r * z wide
};

struct ModelConfig {
  SpatialEncoderConfig spatial;
  ContextEncoderConfig context;
  int num_classes = 14;
  HeadInput head_input = HeadInput::kEmbeddings;
  Variant variant = Variant::kFull;
  double clamp_eps = kDefaultClampEps;
  WeightMode weight_mode = WeightMode::kProbability;

  bool uses_context() const { return variant != Variant::kNoCe; }
  int head_input_width() const;
  void validate() const;

  /// VGG16 feature extractor, 12 blocks at width 512, 16 heads, P = 4, C = 14.
  static ModelConfig reference_default();
  /// 16x16 grayscale, two conv layers, one block at width 32: desk-scale experiments.
  static ModelConfig miniature(int num_classes = 4);
};

struct HydraModel {
  ModelConfig config;
  SpatialEncoderParams spatial;
  ContextEncoderParams context;
  OutputHeadParams heads;
  AdaptiveWeights weights;
};

/// Per-class positive counts plus total sample count.
struct ClassCounts {
  std::vector<std::int64_t> per_class;
  std::int64_t total = 0;
};

/// Builds and initializes every parameter group. Without counts, branch weights start
/// from balanced classes (w_c = 1).
HydraModel build_model(const ModelConfig& config, Rng& rng, const ClassCounts* counts = nullptr,
                       const WeightBundle* spatial_weights = nullptr);

/// Same structure, all zeros. Serves as gradient and optimizer-moment storage.
HydraModel zeros_like(const HydraModel& model);

LossOptions loss_options(const ModelConfig& config);

struct ModelTrace {
  SpatialTrace spatial;
  FeatureMap features;
  ContextTrace context;
  EmbeddingSequence embeddings;
  Vec head_input;
};

BranchOutputs forward(const HydraModel& model, const CxrImage& image, ModelTrace* trace = nullptr);

/// Backpropagates logit gradients through heads, context and spatial encoders.
/// Returns dLoss/dFeatureMap (channel-major).
Mat backward(const HydraModel& model, const ModelTrace& trace, const Vec& grad_individual_logits,
             const Vec& grad_aggregate_logits, HydraModel& grads, bool through_spatial = true);

/// Forward, composite loss, and (when grads is non-null) accumulated gradients of every
/// trainable quantity. Labels are 0/1 doubles.
LossBreakdown sample_loss(const HydraModel& model, const CxrImage& image,
                          std::span<const double> labels, HydraModel* grads = nullptr,
                          BranchOutputs* outputs = nullptr);

/// Per-class ranking scores used for evaluation: clamp(w_c y~^c) when individual heads
/// exist, otherwise the (weighted) aggregate output.
Vec inference_scores(const HydraModel& model, const BranchOutputs& outputs);

template <class T>
std::span<T> scalar_span(T& x) {
  return std::span<T>(&x, 1);
}

/// Visits every trainable array in a fixed order as (name, flat data).
template <class Model, class Fn>
void visit_parameters(Model& m, Fn&& fn) {
  for (std::size_t i = 0; i < m.spatial.convs.size(); ++i) {
    auto& c = m.spatial.convs[i];
    const std::string p = "spatial.conv" + std::to_string(i);
    fn(p + ".weight", as_span(c.weight));
    fn(p + ".bias", as_span(c.bias));
  }
  if (m.context.projection.size() > 0) {
    fn(std::string("context.projection"), as_span(m.context.projection));
    fn(std::string("context.positional"), as_span(m.context.positional));
  }
  for (std::size_t l = 0; l < m.context.blocks.size(); ++l) {
    auto& b = m.context.blocks[l];
    const std::string p = "context.block" + std::to_string(l) + ".";
    fn(p + "norm1_gain", as_span(b.norm1_gain));
    fn(p + "norm1_offset", as_span(b.norm1_offset));
    fn(p + "query", as_span(b.query));
    fn(p + "query_bias", as_span(b.query_bias));
    fn(p + "key", as_span(b.key));
    fn(p + "key_bias", as_span(b.key_bias));
    fn(p + "value", as_span(b.value));
    fn(p + "value_bias", as_span(b.value_bias));
    fn(p + "output", as_span(b.output));
    fn(p + "output_bias", as_span(b.output_bias));
    fn(p + "norm2_gain", as_span(b.norm2_gain));
    fn(p + "norm2_offset", as_span(b.norm2_offset));
    fn(p + "mlp_in", as_span(b.mlp_in));
    fn(p + "mlp_in_bias", as_span(b.mlp_in_bias));
    fn(p + "mlp_out", as_span(b.mlp_out));
    fn(p + "mlp_out_bias", as_span(b.mlp_out_bias));
  }
  for (std::size_t c = 0; c < m.heads.individual.size(); ++c) {
    auto& h = m.heads.individual[c];
    const std::string p = "heads.individual" + std::to_string(c);
    fn(p + ".weight", as_span(h.weight));
    fn(p + ".bias", scalar_span(h.bias));
  }
  if (m.heads.has_aggregate()) {
    fn(std::string("heads.aggregate.weight"), as_span(m.heads.aggregate_weight));
    fn(std::string("heads.aggregate.bias"), as_span(m.heads.aggregate_bias));
  }
  fn(std::string("adaptive.w"), as_span(m.weights.w));
  fn(std::string("adaptive.w_aggregate"), scalar_span(m.weights.w_aggregate));
  fn(std::string("adaptive.alpha"), scalar_span(m.weights.alpha));
  fn(std::string("adaptive.beta"), scalar_span(m.weights.beta));
}

std::size_t parameter_count(const HydraModel& model);

}  // namespace hydravit
