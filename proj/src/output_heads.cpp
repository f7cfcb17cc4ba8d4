#include "hydravit/output_heads.hpp"

#include <algorithm>
#include <numeric>

namespace hydravit {

AdaptiveWeights init_adaptive_weights(std::span<const std::int64_t> class_counts,
                                      std::int64_t total, int num_classes, Rng& rng) {
  if (num_classes <= 0) throw InitializationError("class count must be positive");
  if (static_cast<int>(class_counts.size()) != num_classes)
    throw InitializationError("expected " + std::to_string(num_classes) + " class counts, got " +
                              std::to_string(class_counts.size()));
  AdaptiveWeights aw;
  aw.w.resize(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const auto nc = class_counts[static_cast<std::size_t>(c)];
    if (nc <= 0)
      throw InitializationError("class " + std::to_string(c) +
                                " has no training samples; drop the class or floor its count");
    aw.w[c] = static_cast<double>(total) / (static_cast<double>(num_classes) * static_cast<double>(nc));
  }
  aw.w_aggregate = 1.0 / (num_classes + 1.0);
  std::uniform_real_distribution<double> scale(0.0, 5.0);
  aw.alpha = scale(rng);
  aw.beta = scale(rng);
  return aw;
}

OutputHeadParams build_output_heads(int input_width, int num_classes, OutputHeadLayout layout,
                                    Rng& rng) {
  if (input_width <= 0 || num_classes <= 0)
    throw ConfigError("output heads: input width and class count must be positive");
  OutputHeadParams p;
  p.input_width = input_width;
  p.num_classes = num_classes;
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_width));
  if (layout.individual) {
    for (int c = 0; c < num_classes; ++c) {
      IndividualHead h{Vec(input_width), 0.0};
      fill_uniform(as_span(h.weight), bound, rng);
      p.individual.push_back(std::move(h));
    }
  }
  if (layout.aggregate) {
    p.aggregate_weight.resize(num_classes, input_width);
    fill_uniform(as_span(p.aggregate_weight), bound, rng);
    p.aggregate_bias = Vec::Zero(num_classes);
    p.aggregate_softmax = layout.aggregate_softmax;
  } else {
    p.aggregate_weight.resize(0, input_width);
    p.aggregate_bias.resize(0);
  }
  return p;
}

OutputHeadParams zeros_like(const OutputHeadParams& params) {
  OutputHeadParams z = params;
  for (auto& h : z.individual) {
    h.weight.setZero();
    h.bias = 0.0;
  }
  z.aggregate_weight.setZero();
  z.aggregate_bias.setZero();
  return z;
}

Vec flatten(const EmbeddingSequence& seq) {
  return Eigen::Map<const Vec>(seq.values.data(), seq.values.size());
}

Vec flatten(const FeatureMap& map) {
  Vec out(map.values.size());
  Eigen::Index k = 0;
  for (int r = 0; r < map.extent; ++r)
    for (int c = 0; c < map.extent; ++c)
      for (int ch = 0; ch < map.channels; ++ch) out[k++] = map.at(r, c, ch);
  return out;
}

Mat unflatten_feature_gradient(const Vec& grad, int extent, int channels) {
  Mat out(channels, extent * extent);
  Eigen::Index k = 0;
  for (int r = 0; r < extent; ++r)
    for (int c = 0; c < extent; ++c)
      for (int ch = 0; ch < channels; ++ch) out(ch, r * extent + c) = grad[k++];
  return out;
}

BranchOutputs forward_branches(const Vec& x, const OutputHeadParams& p) {
  if (x.size() != p.input_width)
    throw DimensionError("head input width " + std::to_string(x.size()) + " does not match " +
                         std::to_string(p.input_width));
  BranchOutputs out;
  const auto n_ind = static_cast<Eigen::Index>(p.individual.size());
  out.individual_logits.resize(n_ind);
  out.individual.resize(n_ind);
  for (Eigen::Index c = 0; c < n_ind; ++c) {
    const auto& h = p.individual[static_cast<std::size_t>(c)];
    out.individual_logits[c] = h.weight.dot(x) + h.bias;
    out.individual[c] = logistic(out.individual_logits[c]);
  }
  if (p.has_aggregate()) {
    out.aggregate_logits = p.aggregate_weight * x + p.aggregate_bias;
    if (p.aggregate_softmax) {
      const double mx = out.aggregate_logits.maxCoeff();
      out.aggregate = (out.aggregate_logits.array() - mx).exp().matrix();
      out.aggregate /= out.aggregate.sum();
    } else {
      out.aggregate = out.aggregate_logits.unaryExpr([](double z) { return logistic(z); });
    }
  }
  return out;
}

BranchOutputs forward_branches(const EmbeddingSequence& embedding, const OutputHeadParams& params) {
  return forward_branches(flatten(embedding), params);
}

Vec backward_branches(const Vec& x, const OutputHeadParams& p, const Vec& grad_ind,
                      const Vec& grad_agg, OutputHeadParams& g) {
  Vec grad_x = Vec::Zero(x.size());
  for (std::size_t c = 0; c < p.individual.size(); ++c) {
    const double gl = grad_ind[static_cast<Eigen::Index>(c)];
    if (gl == 0.0) continue;
    g.individual[c].weight += gl * x;
    g.individual[c].bias += gl;
    grad_x += gl * p.individual[c].weight;
  }
  if (p.has_aggregate() && grad_agg.size() > 0) {
    g.aggregate_weight.noalias() += grad_agg * x.transpose();
    g.aggregate_bias += grad_agg;
    grad_x.noalias() += p.aggregate_weight.transpose() * grad_agg;
  }
  return grad_x;
}

std::vector<RankedLabel> rank_scores(std::span<const double> scores, int k) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), order.size());
  std::vector<RankedLabel> out;
  for (std::size_t i = 0; i < take; ++i)
    out.push_back({order[i], scores[static_cast<std::size_t>(order[i])]});
  return out;
}

LabelPrediction predict_labels(const BranchOutputs& outputs, const AdaptiveWeights& weights, int k,
                               double threshold, double clamp_eps) {
  const auto n = outputs.individual.size();
  if (weights.w.size() != n)
    throw DimensionError("weight count " + std::to_string(weights.w.size()) +
                         " does not match individual outputs " + std::to_string(n));
  LabelPrediction pred;
  const int classes = static_cast<int>(n);
  if (k > classes) {
    pred.warning = "top-k request " + std::to_string(k) + " exceeds class count; clamped to " +
                   std::to_string(classes);
    k = classes;
  }
  pred.scores.resize(static_cast<std::size_t>(n));
  pred.decisions.resize(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < n; ++c) {
    const double s = std::clamp(weights.w[c] * outputs.individual[c], clamp_eps, 1.0 - clamp_eps);
    pred.scores[static_cast<std::size_t>(c)] = s;
    pred.decisions[static_cast<std::size_t>(c)] = s >= threshold;
  }
  pred.top = rank_scores(pred.scores, k);
  return pred;
}

}  // namespace hydravit
