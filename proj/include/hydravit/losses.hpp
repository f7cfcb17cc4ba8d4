#pragma once

#include <span>

#include "hydravit/common.hpp"
#include "hydravit/output_heads.hpp"

namespace hydravit {

inline constexpr double kDefaultClampEps = 1e-7;

struct LossBreakdown {
  double bce_mean = 0.0;
  double mlce = 0.0;
  double consistency = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown& operator/=(double n);
};

/// Where the adaptive weights enter the cross-entropy terms.
enum class WeightMode {
  /// BCE(y, w * y~): the weight scales the probability.
  kProbability,
  /// w * BCE(y, y~): the weight scales the loss value.
  kLoss,
};

struct LossOptions {
  double clamp_eps = kDefaultClampEps;
  WeightMode weight_mode = WeightMode::kProbability;
  bool individual_term = true;
  bool aggregate_term = true;
  bool consistency_term = true;
  /// When false the aggregate output enters MLCE unweighted (softmax-head ablation).
  bool weight_aggregate = true;
};

/// Binary cross-entropy with p clamped to [eps, 1 - eps].
double bce(double y, double p, double eps = kDefaultClampEps);

/// Mean of per-class BCE.
double mlce(std::span<const double> y, std::span<const double> p, double eps = kDefaultClampEps);

/// Euclidean norm of u - v.
double consistency_loss(std::span<const double> u, std::span<const double> v);

/// d total / d (every loss input).
struct LossGradient {
  Vec individual;  // wrt y~^c
  Vec aggregate;   // wrt y~^A
  Vec w;
  double w_aggregate = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

/// Three-term objective: mean individual BCE on clamp(w_c y~^c), MLCE on clamp(w_A y~^A),
/// and the consistency distance between alpha * clamp(w_c y~^c) and beta * clamp(w_A y~^A).
/// On a clamp bound an entry passes its gradient only when descent would move it back inside.
LossBreakdown composite_loss(std::span<const double> labels, const BranchOutputs& outputs,
                             const AdaptiveWeights& weights, const LossOptions& options = {},
                             LossGradient* gradient = nullptr);

}  // namespace hydravit
