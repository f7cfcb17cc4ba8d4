#pragma once

#include <vector>

#include "hydravit/common.hpp"
#include "hydravit/spatial_encoder.hpp"

namespace hydravit {

/// Non-overlapping P x P tiles of a (zero-padded) feature map.
///
/// Tiles are ordered row-major over the tile grid. Within a tile, the vector index of
/// cell (i, j) channel ch is (i * P + j) * z + ch, i.e. row-major over (row, col, channel).
struct PatchSequence {
  int patch_size = 0;
  int grid = 0;  // tiles per side
  int channels = 0;
  Mat patches;   // (N_p, z * P * P)

  int count() const { return static_cast<int>(patches.rows()); }
};

struct EmbeddingSequence {
  Mat values;  // (N_p, N_D)
  int layer_index = 0;
};

struct TransformerBlockParams {
  Vec norm1_gain, norm1_offset;
  Mat query, key, value, output;  // (N_D, N_D), applied as X * W
  Vec query_bias, key_bias, value_bias, output_bias;
  Vec norm2_gain, norm2_offset;
  Mat mlp_in;   // (N_D, hidden)
  Vec mlp_in_bias;
  Mat mlp_out;  // (hidden, N_D)
  Vec mlp_out_bias;
};

struct ContextEncoderConfig {
  int patch_size = 4;
  int embed_dim = 512;
  /// Must divide embed_dim.
  int heads = 16;
  int blocks = 12;
  int mlp_ratio = 4;
  double norm_eps = 1e-6;
};

struct ContextEncoderParams {
  ContextEncoderConfig config;
  int feature_extent = 0;
  int feature_channels = 0;
  Mat projection;  // (z * P^2, N_D)
  Mat positional;  // (N_p, N_D)
  std::vector<TransformerBlockParams> blocks;

  int grid() const;
  int patch_count() const { return grid() * grid(); }
  int patch_width() const;
};

/// Smallest multiple of patch_size that is >= extent.
int padded_extent(int extent, int patch_size);

PatchSequence patchify(const FeatureMap& map, int patch_size);
/// Inverse of patchify for gradients: drops the padded cells.
Mat unpatchify_gradient(const Mat& grad_patches, int patch_size, int extent, int channels);

ContextEncoderParams build_context_encoder(const ContextEncoderConfig& config, int feature_extent,
                                           int feature_channels, Rng& rng);
ContextEncoderParams zeros_like(const ContextEncoderParams& params);

EmbeddingSequence embed_patches(const PatchSequence& seq, const ContextEncoderParams& params);

struct LayerNormTrace {
  Mat normalized;  // (x - mean) / std, before gain/offset
  Vec inv_std;
};

struct BlockTrace {
  Mat input;
  LayerNormTrace norm1;
  Mat normed1;
  Mat queries, keys, values;
  std::vector<Mat> attention;  // one (N_p, N_p) row-stochastic matrix per head
  Mat heads_out;               // concatenated head outputs, before the output projection
  Mat residual1;
  LayerNormTrace norm2;
  Mat normed2;
  Mat hidden_pre;
  Mat hidden;
};

/// Row-wise normalization: gain * (x - mean) / sqrt(var + eps) + offset.
Mat layer_norm(const Mat& x, const Vec& gain, const Vec& offset, double eps,
               LayerNormTrace* trace = nullptr);

/// Pre-norm MHSA + residual, then pre-norm MLP + residual.
EmbeddingSequence transformer_block(const EmbeddingSequence& seq,
                                    const TransformerBlockParams& block,
                                    const ContextEncoderConfig& config, BlockTrace* trace = nullptr);

struct ContextTrace {
  PatchSequence patches;
  std::vector<BlockTrace> blocks;
};

EmbeddingSequence encode_context(const FeatureMap& map, const ContextEncoderParams& params,
                                 ContextTrace* trace = nullptr);

/// Accumulates parameter gradients and returns dLoss/dFeatureMap (channel-major).
Mat backward_context(const ContextEncoderParams& params, const ContextTrace& trace,
                     const Mat& grad_embeddings, ContextEncoderParams& grads);

}  // namespace hydravit
