#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hydravit/common.hpp"

namespace hydravit {

/// Single-channel intensity image, values in [0, 1].
struct CxrImage {
  Mat pixels;

  int height() const { return static_cast<int>(pixels.rows()); }
  int width() const { return static_cast<int>(pixels.cols()); }
};

/// Throws ArgumentError unless every pixel is finite and inside [0, 1].
void validate_image(const CxrImage& image);

/// r x r x z grid of local features. Stored channel-major: values(channel, row * r + col).
struct FeatureMap {
  int extent = 0;
  int channels = 0;
  Mat values;

  double at(int row, int col, int channel) const { return values(channel, row * extent + col); }
  double& at(int row, int col, int channel) { return values(channel, row * extent + col); }
};

/// Convolution stages. Each inner vector lists the output widths of the 3x3 convolutions
/// in that stage; every stage ends with a 2x2/stride-2 max pool.
struct SpatialEncoderConfig {
  int input_size = 224;
  /// Grayscale inputs are replicated across this many channels at entry.
  int input_channels = 3;
  std::vector<std::vector<int>> stages = {
      {64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};

  int conv_count() const;
  int output_channels() const;
  int output_extent() const;
  void validate() const;
};

struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  bool pool_after = false;
  /// (out_channels, in_channels * 9); column index is in_channel * 9 + ky * 3 + kx.
  Mat weight;
  Vec bias;
};

struct SpatialEncoderParams {
  SpatialEncoderConfig config;
  std::vector<ConvLayer> convs;
};

/// Named float32 array in the external weight-bundle layout.
struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

using WeightBundle = std::vector<NamedArray>;

/// Reads a bundle directory: manifest.json lists {name, shape, file}; each file is a
/// row-major little-endian float32 payload.
WeightBundle read_weight_bundle(const std::filesystem::path& dir);
void write_weight_bundle(const std::filesystem::path& dir, const WeightBundle& bundle);

/// Exports conv{i}.weight [out, in, 3, 3] and conv{i}.bias [out] as float32.
WeightBundle spatial_weights_to_bundle(const SpatialEncoderParams& params);

/// Builds the layer layout from config. Without weights, kernels get fan-in-scaled
/// uniform values (bound sqrt(6 / fan_in)) and biases start at zero.
SpatialEncoderParams build_spatial_encoder(const SpatialEncoderConfig& config,
                                           const WeightBundle* weights, Rng& rng);

/// Same layout, every entry zero. Used as a gradient accumulator.
SpatialEncoderParams zeros_like(const SpatialEncoderParams& params);

/// Saved forward intermediates for backpropagation.
struct SpatialTrace {
  std::vector<Mat> columns;      // im2col of each conv input
  std::vector<Mat> activations;  // rectified conv output, before pooling
  std::vector<std::vector<int>> pool_argmax;
  std::vector<int> extents;  // spatial extent seen by each conv
};

/// Conv -> ReLU (-> MaxPool at stage ends) chain. Input must be input_size square.
FeatureMap encode_spatial(const CxrImage& image, const SpatialEncoderParams& params,
                          SpatialTrace* trace = nullptr);

/// Accumulates parameter gradients into grads given dLoss/dFeatureMap (channel-major).
void backward_spatial(const SpatialEncoderParams& params, const SpatialTrace& trace,
                      const Mat& grad_features, SpatialEncoderParams& grads);

}  // namespace hydravit
