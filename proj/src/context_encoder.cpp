#include "hydravit/context_encoder.hpp"

#include <cmath>
#include <string>

namespace hydravit {
namespace {

void init_linear(Mat& w, Vec& b, int fan_in, int fan_out, Rng& rng) {
  w.resize(fan_in, fan_out);
  fill_uniform(as_span(w), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  b = Vec::Zero(fan_out);
}

Mat add_row_bias(Mat m, const Vec& bias) {
  m.rowwise() += bias.transpose();
  return m;
}

Mat softmax_rows(const Mat& scores) {
  Mat out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      out(r, c) = std::exp(scores(r, c) - mx);
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  return out;
}

Mat layer_norm_backward(const Mat& grad_out, const Vec& gain, const LayerNormTrace& trace,
                        Vec& grad_gain, Vec& grad_offset) {
  const Eigen::Index width = grad_out.cols();
  grad_gain += (grad_out.array() * trace.normalized.array()).colwise().sum().transpose().matrix();
  grad_offset += grad_out.colwise().sum().transpose();
  Mat grad_norm = grad_out.array().rowwise() * gain.transpose().array();
  Mat grad_in(grad_out.rows(), width);
  for (Eigen::Index r = 0; r < grad_out.rows(); ++r) {
    const double sum_g = grad_norm.row(r).sum();
    const double sum_gx = grad_norm.row(r).dot(trace.normalized.row(r));
    grad_in.row(r) = (trace.inv_std[r] / static_cast<double>(width)) *
                     (static_cast<double>(width) * grad_norm.row(r).array() - sum_g -
                      trace.normalized.row(r).array() * sum_gx)
                         .matrix();
  }
  return grad_in;
}

Mat backward_block(const TransformerBlockParams& p, const ContextEncoderConfig& cfg,
                   const BlockTrace& t, const Mat& grad_out, TransformerBlockParams& g) {
  // MLP branch: out = residual1 + relu(normed2 * W1 + b1) * W2 + b2
  g.mlp_out.noalias() += t.hidden.transpose() * grad_out;
  g.mlp_out_bias += grad_out.colwise().sum().transpose();
  Mat grad_hidden = grad_out * p.mlp_out.transpose();
  grad_hidden = (t.hidden_pre.array() > 0.0).select(grad_hidden, 0.0);
  g.mlp_in.noalias() += t.normed2.transpose() * grad_hidden;
  g.mlp_in_bias += grad_hidden.colwise().sum().transpose();
  Mat grad_normed2 = grad_hidden * p.mlp_in.transpose();
  Mat grad_res1 = grad_out + layer_norm_backward(grad_normed2, p.norm2_gain, t.norm2,
                                                 g.norm2_gain, g.norm2_offset);

  // Attention branch: residual1 = input + heads_out * Wo + bo
  g.output.noalias() += t.heads_out.transpose() * grad_res1;
  g.output_bias += grad_res1.colwise().sum().transpose();
  const Mat grad_heads = grad_res1 * p.output.transpose();

  const int dim = cfg.embed_dim;
  const int head_dim = dim / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Mat grad_q = Mat::Zero(t.queries.rows(), dim);
  Mat grad_k = Mat::Zero(t.keys.rows(), dim);
  Mat grad_v = Mat::Zero(t.values.rows(), dim);
  for (int h = 0; h < cfg.heads; ++h) {
    const auto q = t.queries.middleCols(h * head_dim, head_dim);
    const auto k = t.keys.middleCols(h * head_dim, head_dim);
    const auto v = t.values.middleCols(h * head_dim, head_dim);
    const Mat& attn = t.attention[static_cast<std::size_t>(h)];
    const auto grad_o = grad_heads.middleCols(h * head_dim, head_dim);
    const Mat grad_attn = grad_o * v.transpose();
    grad_v.middleCols(h * head_dim, head_dim) = attn.transpose() * grad_o;
    Mat grad_scores(attn.rows(), attn.cols());
    for (Eigen::Index r = 0; r < attn.rows(); ++r) {
      const double inner = grad_attn.row(r).dot(attn.row(r));
      grad_scores.row(r) = attn.row(r).array() * (grad_attn.row(r).array() - inner);
    }
    grad_q.middleCols(h * head_dim, head_dim) = scale * (grad_scores * k);
    grad_k.middleCols(h * head_dim, head_dim) = scale * (grad_scores.transpose() * q);
  }
  g.query.noalias() += t.normed1.transpose() * grad_q;
  g.key.noalias() += t.normed1.transpose() * grad_k;
  g.value.noalias() += t.normed1.transpose() * grad_v;
  g.query_bias += grad_q.colwise().sum().transpose();
  g.key_bias += grad_k.colwise().sum().transpose();
  g.value_bias += grad_v.colwise().sum().transpose();
  const Mat grad_normed1 =
      grad_q * p.query.transpose() + grad_k * p.key.transpose() + grad_v * p.value.transpose();
  return grad_res1 + layer_norm_backward(grad_normed1, p.norm1_gain, t.norm1, g.norm1_gain,
                                         g.norm1_offset);
}

}  // namespace

int padded_extent(int extent, int patch_size) {
  return (extent + patch_size - 1) / patch_size * patch_size;
}

int ContextEncoderParams::grid() const {
  return padded_extent(feature_extent, config.patch_size) / config.patch_size;
}

int ContextEncoderParams::patch_width() const {
  return feature_channels * config.patch_size * config.patch_size;
}

PatchSequence patchify(const FeatureMap& map, int patch_size) {
  if (patch_size <= 0) throw ArgumentError("patch size must be positive, got " + std::to_string(patch_size));
  const int padded = padded_extent(map.extent, patch_size);
  const int grid = padded / patch_size;
  const int z = map.channels;
  PatchSequence seq{patch_size, grid, z, Mat::Zero(grid * grid, z * patch_size * patch_size)};
  for (int gr = 0; gr < grid; ++gr)
    for (int gc = 0; gc < grid; ++gc) {
      const int p = gr * grid + gc;
      for (int i = 0; i < patch_size; ++i) {
        const int row = gr * patch_size + i;
        if (row >= map.extent) continue;
        for (int j = 0; j < patch_size; ++j) {
          const int col = gc * patch_size + j;
          if (col >= map.extent) continue;
          for (int ch = 0; ch < z; ++ch)
            seq.patches(p, (i * patch_size + j) * z + ch) = map.at(row, col, ch);
        }
      }
    }
  return seq;
}

Mat unpatchify_gradient(const Mat& grad_patches, int patch_size, int extent, int channels) {
  const int grid = padded_extent(extent, patch_size) / patch_size;
  Mat out = Mat::Zero(channels, extent * extent);
  for (int gr = 0; gr < grid; ++gr)
    for (int gc = 0; gc < grid; ++gc) {
      const int p = gr * grid + gc;
      for (int i = 0; i < patch_size; ++i) {
        const int row = gr * patch_size + i;
        if (row >= extent) continue;
        for (int j = 0; j < patch_size; ++j) {
          const int col = gc * patch_size + j;
          if (col >= extent) continue;
          for (int ch = 0; ch < channels; ++ch)
            out(ch, row * extent + col) = grad_patches(p, (i * patch_size + j) * channels + ch);
        }
      }
    }
  return out;
}

ContextEncoderParams build_context_encoder(const ContextEncoderConfig& config, int feature_extent,
                                           int feature_channels, Rng& rng) {
  if (config.patch_size <= 0) throw ConfigError("context encoder: patch_size must be positive");
  if (config.embed_dim <= 0) throw ConfigError("context encoder: embed_dim must be positive");
  if (config.heads <= 0 || config.embed_dim % config.heads != 0)
    throw ConfigError("context encoder: heads (" + std::to_string(config.heads) +
                      ") must divide embed_dim (" + std::to_string(config.embed_dim) + ")");
  if (config.blocks < 0) throw ConfigError("context encoder: blocks must be >= 0");
  if (config.mlp_ratio <= 0) throw ConfigError("context encoder: mlp_ratio must be positive");

  ContextEncoderParams p;
  p.config = config;
  p.feature_extent = feature_extent;
  p.feature_channels = feature_channels;
  const int dim = config.embed_dim;
  const int width = p.patch_width();
  p.projection.resize(width, dim);
  fill_uniform(as_span(p.projection), 1.0 / std::sqrt(static_cast<double>(width)), rng);
  p.positional.resize(p.patch_count(), dim);
  fill_normal(as_span(p.positional), 0.02, rng);

  const int hidden = dim * config.mlp_ratio;
  for (int l = 0; l < config.blocks; ++l) {
    TransformerBlockParams b;
    b.norm1_gain = Vec::Ones(dim);
    b.norm1_offset = Vec::Zero(dim);
    b.norm2_gain = Vec::Ones(dim);
    b.norm2_offset = Vec::Zero(dim);
    init_linear(b.query, b.query_bias, dim, dim, rng);
    init_linear(b.key, b.key_bias, dim, dim, rng);
    init_linear(b.value, b.value_bias, dim, dim, rng);
    init_linear(b.output, b.output_bias, dim, dim, rng);
    init_linear(b.mlp_in, b.mlp_in_bias, dim, hidden, rng);
    init_linear(b.mlp_out, b.mlp_out_bias, hidden, dim, rng);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

ContextEncoderParams zeros_like(const ContextEncoderParams& params) {
  ContextEncoderParams z = params;
  z.projection.setZero();
  z.positional.setZero();
  for (auto& b : z.blocks) {
    for (Vec* v : {&b.norm1_gain, &b.norm1_offset, &b.norm2_gain, &b.norm2_offset, &b.query_bias,
                   &b.key_bias, &b.value_bias, &b.output_bias, &b.mlp_in_bias, &b.mlp_out_bias})
      v->setZero();
    for (Mat* m : {&b.query, &b.key, &b.value, &b.output, &b.mlp_in, &b.mlp_out}) m->setZero();
  }
  return z;
}

EmbeddingSequence embed_patches(const PatchSequence& seq, const ContextEncoderParams& params) {
  if (seq.patches.cols() != params.projection.rows())
    throw DimensionError("patch width " + std::to_string(seq.patches.cols()) +
                         " does not match projection input width " +
                         std::to_string(params.projection.rows()));
  if (seq.patches.rows() != params.positional.rows())
    throw DimensionError("patch count " + std::to_string(seq.patches.rows()) +
                         " does not match positional table rows " +
                         std::to_string(params.positional.rows()));
  return EmbeddingSequence{seq.patches * params.projection + params.positional, 0};
}

Mat layer_norm(const Mat& x, const Vec& gain, const Vec& offset, double eps, LayerNormTrace* trace) {
  const double width = static_cast<double>(x.cols());
  Mat normalized(x.rows(), x.cols());
  Vec inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / width;
    const auto centered = (x.row(r).array() - mean).matrix();
    const double var = centered.squaredNorm() / width;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = centered * inv_std[r];
  }
  Mat out = (normalized.array().rowwise() * gain.transpose().array()).matrix();
  out.rowwise() += offset.transpose();
  if (trace) {
    trace->normalized = std::move(normalized);
    trace->inv_std = std::move(inv_std);
  }
  return out;
}

EmbeddingSequence transformer_block(const EmbeddingSequence& seq, const TransformerBlockParams& b,
                                    const ContextEncoderConfig& cfg, BlockTrace* trace) {
  const int dim = cfg.embed_dim;
  if (seq.values.cols() != dim)
    throw DimensionError("embedding width " + std::to_string(seq.values.cols()) +
                         " does not match block width " + std::to_string(dim));
  const int head_dim = dim / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  BlockTrace local;
  BlockTrace& t = trace ? *trace : local;
  t.input = seq.values;
  t.normed1 = layer_norm(seq.values, b.norm1_gain, b.norm1_offset, cfg.norm_eps, &t.norm1);
  t.queries = add_row_bias(t.normed1 * b.query, b.query_bias);
  t.keys = add_row_bias(t.normed1 * b.key, b.key_bias);
  t.values = add_row_bias(t.normed1 * b.value, b.value_bias);
  t.heads_out.resize(seq.values.rows(), dim);
  t.attention.clear();
  for (int h = 0; h < cfg.heads; ++h) {
    const auto q = t.queries.middleCols(h * head_dim, head_dim);
    const auto k = t.keys.middleCols(h * head_dim, head_dim);
    const auto v = t.values.middleCols(h * head_dim, head_dim);
    Mat attn = softmax_rows(scale * (q * k.transpose()));
    t.heads_out.middleCols(h * head_dim, head_dim) = attn * v;
    t.attention.push_back(std::move(attn));
  }
  t.residual1 = add_row_bias(t.heads_out * b.output, b.output_bias) + seq.values;
  t.normed2 = layer_norm(t.residual1, b.norm2_gain, b.norm2_offset, cfg.norm_eps, &t.norm2);
  t.hidden_pre = add_row_bias(t.normed2 * b.mlp_in, b.mlp_in_bias);
  t.hidden = t.hidden_pre.cwiseMax(0.0);
  Mat out = add_row_bias(t.hidden * b.mlp_out, b.mlp_out_bias) + t.residual1;
  return EmbeddingSequence{std::move(out), seq.layer_index + 1};
}

EmbeddingSequence encode_context(const FeatureMap& map, const ContextEncoderParams& params,
                                 ContextTrace* trace) {
  if (map.extent != params.feature_extent || map.channels != params.feature_channels)
    throw DimensionError("feature map " + std::to_string(map.extent) + "x" +
                         std::to_string(map.extent) + "x" + std::to_string(map.channels) +
                         " does not match context encoder input " +
                         std::to_string(params.feature_extent) + "x" +
                         std::to_string(params.feature_extent) + "x" +
                         std::to_string(params.feature_channels));
  PatchSequence patches = patchify(map, params.config.patch_size);
  EmbeddingSequence seq = embed_patches(patches, params);
  if (trace) {
    trace->blocks.assign(params.blocks.size(), BlockTrace{});
    trace->patches = std::move(patches);
  }
  for (std::size_t l = 0; l < params.blocks.size(); ++l)
    seq = transformer_block(seq, params.blocks[l], params.config, trace ? &trace->blocks[l] : nullptr);
  return seq;
}

Mat backward_context(const ContextEncoderParams& params, const ContextTrace& trace,
                     const Mat& grad_embeddings, ContextEncoderParams& grads) {
  Mat grad = grad_embeddings;
  for (std::size_t l = params.blocks.size(); l-- > 0;)
    grad = backward_block(params.blocks[l], params.config, trace.blocks[l], grad, grads.blocks[l]);
  grads.positional += grad;
  grads.projection.noalias() += trace.patches.patches.transpose() * grad;
  const Mat grad_patches = grad * params.projection.transpose();
  return unpatchify_gradient(grad_patches, params.config.patch_size, params.feature_extent,
                             params.feature_channels);
}

}  // namespace hydravit
