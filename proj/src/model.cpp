#include "hydravit/model.hpp"

#include <array>
#include <utility>

namespace hydravit {
namespace {

constexpr std::array<std::pair<Variant, const char*>, 7> kVariantNames{{
    {Variant::kFull, "full"},
    {Variant::kNoMbo, "no_mbo"},
    {Variant::kNoCe, "no_ce"},
    {Variant::kNoAggregate, "no_aggregate"},
    {Variant::kNoInit, "no_init"},
    {Variant::kAggregatedOnly, "aggregated_only"},
    {Variant::kEnsemblePerLabel, "ensemble_per_label"},
}};

Vec sigmoid_logit_grad(const Vec& grad_prob, const Vec& prob) {
  return (grad_prob.array() * prob.array() * (1.0 - prob.array())).matrix();
}

Vec softmax_logit_grad(const Vec& grad_prob, const Vec& prob) {
  const double inner = grad_prob.dot(prob);
  return (prob.array() * (grad_prob.array() - inner)).matrix();
}

}  // namespace

std::string to_string(Variant v) {
  for (const auto& [key, name] : kVariantNames)
    if (key == v) return name;
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (const auto& [key, label] : kVariantNames)
    if (name == label) return key;
  throw ConfigError("unknown variant '" + name + "'");
}

int ModelConfig::head_input_width() const {
  const int r = spatial.output_extent();
  const int z = spatial.output_channels();
  if (!uses_context() || head_input == HeadInput::kFeatureMap) return r * r * z;
  const int grid = padded_extent(r, context.patch_size) / context.patch_size;
  return grid * grid * context.embed_dim;
}

void ModelConfig::validate() const {
  spatial.validate();
  if (num_classes <= 0) throw ConfigError("num_classes must be positive");
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw ConfigError("clamp_eps must lie in (0, 0.5)");
}

ModelConfig ModelConfig::reference_default() { return ModelConfig{}; }

ModelConfig ModelConfig::miniature(int num_classes) {
  ModelConfig c;
  c.spatial.input_size = 16;
  c.spatial.input_channels = 1;
  c.spatial.stages = {{8}, {16}};
  c.context.patch_size = 2;
  c.context.embed_dim = 32;
  c.context.heads = 4;
  c.context.blocks = 1;
  c.num_classes = num_classes;
  return c;
}

HydraModel build_model(const ModelConfig& config, Rng& rng, const ClassCounts* counts,
                       const WeightBundle* spatial_weights) {
  config.validate();
  if (config.variant == Variant::kEnsemblePerLabel)
    throw ConfigError("ensemble_per_label is assembled from per-class models, not built directly");
  HydraModel m;
  m.config = config;
  m.spatial = build_spatial_encoder(config.spatial, spatial_weights, rng);
  const int r = config.spatial.output_extent();
  const int z = config.spatial.output_channels();
  const bool context = config.uses_context() && config.head_input == HeadInput::kEmbeddings;
  if (context) {
    m.context = build_context_encoder(config.context, r, z, rng);
  } else {
    m.context.config = config.context;
    m.context.feature_extent = r;
    m.context.feature_channels = z;
  }

  OutputHeadLayout layout;
  switch (config.variant) {
    case Variant::kNoMbo:
      layout = {false, true, true};
      break;
    case Variant::kNoAggregate:
      layout = {true, false, false};
      break;
    case Variant::kAggregatedOnly:
      layout = {false, true, false};
      break;
    default:
      layout = {true, true, false};
  }
  m.heads = build_output_heads(config.head_input_width(), config.num_classes, layout, rng);

  ClassCounts balanced{std::vector<std::int64_t>(static_cast<std::size_t>(config.num_classes), 1),
                       config.num_classes};
  m.weights = init_adaptive_weights(counts ? counts->per_class : balanced.per_class,
                                    counts ? counts->total : balanced.total, config.num_classes, rng);
  if (config.variant == Variant::kNoInit) {
    m.weights.w.setZero();
    m.weights.w_aggregate = 0.0;
  }
  return m;
}

HydraModel zeros_like(const HydraModel& model) {
  HydraModel z;
  z.config = model.config;
  z.spatial = zeros_like(model.spatial);
  z.context = zeros_like(model.context);
  z.heads = zeros_like(model.heads);
  z.weights.w = Vec::Zero(model.weights.w.size());
  return z;
}

LossOptions loss_options(const ModelConfig& config) {
  LossOptions o;
  o.clamp_eps = config.clamp_eps;
  o.weight_mode = config.weight_mode;
  switch (config.variant) {
    case Variant::kNoMbo:
      o.individual_term = false;
      o.consistency_term = false;
      o.weight_aggregate = false;
      break;
    case Variant::kNoAggregate:
      o.aggregate_term = false;
      o.consistency_term = false;
      break;
    case Variant::kAggregatedOnly:
      o.individual_term = false;
      o.consistency_term = false;
      break;
    default:
      break;
  }
  return o;
}

BranchOutputs forward(const HydraModel& model, const CxrImage& image, ModelTrace* trace) {
  ModelTrace local;
  ModelTrace& t = trace ? *trace : local;
  t.features = encode_spatial(image, model.spatial, trace ? &t.spatial : nullptr);
  if (!model.context.blocks.empty() || model.context.projection.size() > 0) {
    t.embeddings = encode_context(t.features, model.context, trace ? &t.context : nullptr);
    t.head_input = flatten(t.embeddings);
  } else {
    t.head_input = flatten(t.features);
  }
  return forward_branches(t.head_input, model.heads);
}

Mat backward(const HydraModel& model, const ModelTrace& trace, const Vec& grad_ind_logits,
             const Vec& grad_agg_logits, HydraModel& grads, bool through_spatial) {
  const Vec grad_input =
      backward_branches(trace.head_input, model.heads, grad_ind_logits, grad_agg_logits, grads.heads);
  Mat grad_features;
  if (model.context.projection.size() > 0) {
    const Mat grad_emb = Eigen::Map<const Mat>(grad_input.data(), trace.embeddings.values.rows(),
                                               trace.embeddings.values.cols());
    grad_features = backward_context(model.context, trace.context, grad_emb, grads.context);
  } else {
    grad_features =
        unflatten_feature_gradient(grad_input, trace.features.extent, trace.features.channels);
  }
  if (through_spatial) backward_spatial(model.spatial, trace.spatial, grad_features, grads.spatial);
  return grad_features;
}

LossBreakdown sample_loss(const HydraModel& model, const CxrImage& image,
                          std::span<const double> labels, HydraModel* grads, BranchOutputs* outputs) {
  ModelTrace trace;
  BranchOutputs out = forward(model, image, grads ? &trace : nullptr);
  const LossOptions opts = loss_options(model.config);
  LossGradient lg;
  const LossBreakdown loss = composite_loss(labels, out, model.weights, opts, grads ? &lg : nullptr);
  if (grads) {
    grads->weights.w += lg.w;
    grads->weights.w_aggregate += lg.w_aggregate;
    grads->weights.alpha += lg.alpha;
    grads->weights.beta += lg.beta;
    const Vec gi = out.individual.size() > 0 ? sigmoid_logit_grad(lg.individual, out.individual) : Vec();
    Vec ga;
    if (out.aggregate.size() > 0)
      ga = model.heads.aggregate_softmax ? softmax_logit_grad(lg.aggregate, out.aggregate)
                                         : sigmoid_logit_grad(lg.aggregate, out.aggregate);
    backward(model, trace, gi, ga, *grads);
  }
  if (outputs) *outputs = std::move(out);
  return loss;
}

Vec inference_scores(const HydraModel& model, const BranchOutputs& outputs) {
  const double eps = model.config.clamp_eps;
  auto clamp = [eps](double x) { return std::clamp(x, eps, 1.0 - eps); };
  if (outputs.individual.size() > 0)
    return (model.weights.w.array() * outputs.individual.array()).unaryExpr(clamp).matrix();
  if (model.heads.aggregate_softmax) return outputs.aggregate;
  return (model.weights.w_aggregate * outputs.aggregate.array()).unaryExpr(clamp).matrix();
}

std::size_t parameter_count(const HydraModel& model) {
  std::size_t n = 0;
  visit_parameters(model, [&](const std::string&, std::span<const double> s) { n += s.size(); });
  return n;
}

}  // namespace hydravit
