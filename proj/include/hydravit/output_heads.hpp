#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hydravit/common.hpp"
#include "hydravit/context_encoder.hpp"

namespace hydravit {

/// Learnable per-branch weights w_1..w_C, w_A and the consistency scales alpha, beta.
struct AdaptiveWeights {
  Vec w;
  double w_aggregate = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// w_c = N / (C * N_c), w_A = 1 / (C + 1), alpha and beta ~ U[0, 5].
/// Throws InitializationError when a class has no training samples.
AdaptiveWeights init_adaptive_weights(std::span<const std::int64_t> class_counts,
                                      std::int64_t total, int num_classes, Rng& rng);

struct IndividualHead {
  Vec weight;
  double bias = 0.0;
};

/// C single-output logistic heads plus one C-wide aggregate head. Each head owns its
/// parameters. Either group may be empty for ablation variants; when aggregate_softmax
/// is set the aggregate head is squashed by a softmax over classes instead.
struct OutputHeadParams {
  int input_width = 0;
  int num_classes = 0;
  std::vector<IndividualHead> individual;
  Mat aggregate_weight;  // (C, d)
  Vec aggregate_bias;
  bool aggregate_softmax = false;

  bool has_individual() const { return !individual.empty(); }
  bool has_aggregate() const { return aggregate_weight.rows() > 0; }
};

struct OutputHeadLayout {
  bool individual = true;
  bool aggregate = true;
  bool aggregate_softmax = false;
};

OutputHeadParams build_output_heads(int input_width, int num_classes, OutputHeadLayout layout,
                                    Rng& rng);
OutputHeadParams zeros_like(const OutputHeadParams& params);

struct BranchOutputs {
  Vec individual;         // y~^c, empty when the model has no individual heads
  Vec aggregate;          // y~^A, empty when the model has no aggregate head
  Vec individual_logits;  // pre-logistic values
  Vec aggregate_logits;
};

/// Flattens an embedding sequence row-major into the head input vector.
Vec flatten(const EmbeddingSequence& seq);
/// Flattens a feature map row-major over (row, col, channel).
Vec flatten(const FeatureMap& map);
/// Inverse of flatten(FeatureMap) for gradients: returns the channel-major layout.
Mat unflatten_feature_gradient(const Vec& grad, int extent, int channels);

BranchOutputs forward_branches(const Vec& head_input, const OutputHeadParams& params);
BranchOutputs forward_branches(const EmbeddingSequence& embedding, const OutputHeadParams& params);

/// Accumulates head gradients from dLoss/dlogits and returns dLoss/dhead_input.
Vec backward_branches(const Vec& head_input, const OutputHeadParams& params,
                      const Vec& grad_individual_logits, const Vec& grad_aggregate_logits,
                      OutputHeadParams& grads);

struct RankedLabel {
  int class_index = 0;
  double score = 0.0;
};

struct LabelPrediction {
  std::vector<double> scores;     // clamp(w_c * y~^c, eps, 1 - eps)
  std::vector<bool> decisions;    // score >= threshold
  std::vector<RankedLabel> top;   // descending score, ties by ascending class index
  std::optional<std::string> warning;
};

/// Scores from the individual branches weighted by w. k larger than C is clamped.
LabelPrediction predict_labels(const BranchOutputs& outputs, const AdaptiveWeights& weights, int k,
                               double threshold = 0.5, double clamp_eps = 1e-7);

/// Ranks an arbitrary score vector with the same tie-break as predict_labels.
std::vector<RankedLabel> rank_scores(std::span<const double> scores, int k);

}  // namespace hydravit
