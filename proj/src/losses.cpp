#include "hydravit/losses.hpp"

#include <algorithm>
#include <cmath>

namespace hydravit {
namespace {

struct Clamped {
  double value;
  int side;  // -1 on the lower bound, +1 on the upper bound, 0 inside

  bool active() const { return side == 0; }
  // On a bound only a gradient whose descent step re-enters the interval passes.
  bool passes(double d) const { return side == 0 || (side < 0 && d < 0.0) || (side > 0 && d > 0.0); }
};

Clamped clamp_prob(double q, double eps) {
  if (q <= eps) return {eps, -1};
  if (q >= 1.0 - eps) return {1.0 - eps, 1};
  return {q, 0};
}

double bce_derivative(double y, double p) { return -y / p + (1.0 - y) / (1.0 - p); }

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                         std::to_string(b));
}

}  // namespace

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  bce_mean += o.bce_mean;
  mlce += o.mlce;
  consistency += o.consistency;
  total += o.total;
  return *this;
}

LossBreakdown& LossBreakdown::operator/=(double n) {
  bce_mean /= n;
  mlce /= n;
  consistency /= n;
  total /= n;
  return *this;
}

double bce(double y, double p, double eps) {
  const double q = std::clamp(p, eps, 1.0 - eps);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

double mlce(std::span<const double> y, std::span<const double> p, double eps) {
  require_same(y.size(), p.size(), "mlce");
  if (y.empty()) throw DimensionError("mlce: empty label vector");
  double sum = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) sum += bce(y[c], p[c], eps);
  return sum / static_cast<double>(y.size());
}

double consistency_loss(std::span<const double> u, std::span<const double> v) {
  require_same(u.size(), v.size(), "consistency_loss");
  double sq = 0.0;
  for (std::size_t c = 0; c < u.size(); ++c) sq += (u[c] - v[c]) * (u[c] - v[c]);
  return std::sqrt(sq);
}

LossBreakdown composite_loss(std::span<const double> labels, const BranchOutputs& outputs,
                             const AdaptiveWeights& weights, const LossOptions& opt,
                             LossGradient* grad) {
  const auto C = static_cast<Eigen::Index>(labels.size());
  const double eps = opt.clamp_eps;
  const bool use_ind = opt.individual_term;
  const bool use_agg = opt.aggregate_term;
  const bool use_cl = opt.consistency_term && use_ind && use_agg;
  if (use_ind) {
    require_same(static_cast<std::size_t>(outputs.individual.size()), labels.size(), "individual outputs");
    require_same(static_cast<std::size_t>(weights.w.size()), labels.size(), "branch weights");
  }
  if (use_agg)
    require_same(static_cast<std::size_t>(outputs.aggregate.size()), labels.size(), "aggregate output");

  if (grad) {
    grad->individual = Vec::Zero(outputs.individual.size());
    grad->aggregate = Vec::Zero(outputs.aggregate.size());
    grad->w = Vec::Zero(weights.w.size());
    grad->w_aggregate = grad->alpha = grad->beta = 0.0;
  }

  const bool loss_mode = opt.weight_mode == WeightMode::kLoss;
  LossBreakdown out;

  // Weighted, clamped branch values; also what the consistency term compares.
  std::vector<Clamped> ind(static_cast<std::size_t>(use_ind ? C : 0));
  std::vector<Clamped> agg(static_cast<std::size_t>(use_agg ? C : 0));
  std::vector<double> ind_weighted(ind.size()), agg_weighted(agg.size());
  // dL/d(weighted value) per entry, chained to w and y~ once every term has contributed.
  std::vector<double> dq_ind(ind.size(), 0.0), dq_agg(agg.size(), 0.0);

  if (use_ind) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < C; ++c) {
      const double y = labels[static_cast<std::size_t>(c)];
      const double wc = weights.w[c];
      const double yt = outputs.individual[c];
      auto& k = ind[static_cast<std::size_t>(c)];
      k = clamp_prob(wc * yt, eps);
      ind_weighted[static_cast<std::size_t>(c)] = k.value;
      if (loss_mode) {
        const Clamped raw = clamp_prob(yt, eps);
        const double term = bce(y, raw.value, eps);
        sum += wc * term;
        if (grad) {
          grad->w[c] += term / static_cast<double>(C);
          if (raw.active()) grad->individual[c] += wc * bce_derivative(y, raw.value) / static_cast<double>(C);
        }
      } else {
        sum += bce(y, k.value, eps);
        dq_ind[static_cast<std::size_t>(c)] += bce_derivative(y, k.value) / static_cast<double>(C);
      }
    }
    out.bce_mean = sum / static_cast<double>(C);
  }

  if (use_agg) {
    const double wa = opt.weight_aggregate ? weights.w_aggregate : 1.0;
    double sum = 0.0;
    for (Eigen::Index c = 0; c < C; ++c) {
      const double y = labels[static_cast<std::size_t>(c)];
      const double ya = outputs.aggregate[c];
      auto& k = agg[static_cast<std::size_t>(c)];
      k = clamp_prob(wa * ya, eps);
      agg_weighted[static_cast<std::size_t>(c)] = k.value;
      if (loss_mode && opt.weight_aggregate) {
        const Clamped raw = clamp_prob(ya, eps);
        const double term = bce(y, raw.value, eps);
        sum += wa * term;
        if (grad) {
          grad->w_aggregate += term / static_cast<double>(C);
          if (raw.active()) grad->aggregate[c] += wa * bce_derivative(y, raw.value) / static_cast<double>(C);
        }
      } else {
        sum += bce(y, k.value, eps);
        dq_agg[static_cast<std::size_t>(c)] += bce_derivative(y, k.value) / static_cast<double>(C);
      }
    }
    out.mlce = sum / static_cast<double>(C);
  }

  if (use_cl) {
    std::vector<double> u(ind_weighted.size()), v(agg_weighted.size());
    for (std::size_t c = 0; c < u.size(); ++c) {
      u[c] = weights.alpha * ind_weighted[c];
      v[c] = weights.beta * agg_weighted[c];
    }
    out.consistency = consistency_loss(u, v);
    // The norm is not differentiable at zero; use the zero subgradient there.
    if (grad && out.consistency > 0.0) {
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double unit = (u[i] - v[i]) / out.consistency;
        grad->alpha += unit * ind_weighted[i];
        grad->beta -= unit * agg_weighted[i];
        dq_ind[i] += unit * weights.alpha;
        dq_agg[i] -= unit * weights.beta;
      }
    }
  }

  if (grad) {
    const double wa = opt.weight_aggregate ? weights.w_aggregate : 1.0;
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(ind.size()); ++c) {
      const auto i = static_cast<std::size_t>(c);
      if (!ind[i].passes(dq_ind[i])) continue;
      grad->w[c] += dq_ind[i] * outputs.individual[c];
      grad->individual[c] += dq_ind[i] * weights.w[c];
    }
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(agg.size()); ++c) {
      const auto i = static_cast<std::size_t>(c);
      if (!agg[i].passes(dq_agg[i])) continue;
      if (opt.weight_aggregate) grad->w_aggregate += dq_agg[i] * outputs.aggregate[c];
      grad->aggregate[c] += dq_agg[i] * wa;
    }
  }

  out.total = out.bce_mean + out.mlce + out.consistency;
  return out;
}

}  // namespace hydravit
