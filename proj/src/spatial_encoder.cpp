#include "hydravit/spatial_encoder.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace hydravit {
namespace {

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel;

// (channels, n*n) -> (channels*9, n*n) with one-pixel zero padding.
Mat im2col(const Mat& input, int extent) {
  const int channels = static_cast<int>(input.rows());
  const int area = extent * extent;
  Mat cols = Mat::Zero(channels * kTaps, area);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        const int row = c * kTaps + ky * kKernel + kx;
        double* dst = cols.row(row).data();
        for (int y = 0; y < extent; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= extent) continue;
          for (int x = 0; x < extent; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= extent) continue;
            dst[y * extent + x] = input(c, sy * extent + sx);
          }
        }
      }
    }
  }
  return cols;
}

Mat col2im(const Mat& cols, int channels, int extent) {
  Mat out = Mat::Zero(channels, extent * extent);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        const double* src = cols.row(c * kTaps + ky * kKernel + kx).data();
        for (int y = 0; y < extent; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= extent) continue;
          for (int x = 0; x < extent; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= extent) continue;
            out(c, sy * extent + sx) += src[y * extent + x];
          }
        }
      }
    }
  }
  return out;
}

Mat max_pool(const Mat& input, int extent, std::vector<int>* argmax) {
  const int half = extent / 2;
  Mat out(input.rows(), half * half);
  if (argmax) argmax->assign(static_cast<std::size_t>(out.size()), 0);
  for (Eigen::Index c = 0; c < input.rows(); ++c) {
    for (int y = 0; y < half; ++y) {
      for (int x = 0; x < half; ++x) {
        int best = (2 * y) * extent + 2 * x;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * y + dy) * extent + 2 * x + dx;
            if (input(c, idx) > input(c, best)) best = idx;
          }
        out(c, y * half + x) = input(c, best);
        if (argmax) (*argmax)[static_cast<std::size_t>(c * half * half + y * half + x)] = best;
      }
    }
  }
  return out;
}

std::string conv_name(std::size_t i, const char* suffix) {
  return "conv" + std::to_string(i) + "." + suffix;
}

}  // namespace

void validate_image(const CxrImage& image) {
  for (Eigen::Index i = 0; i < image.pixels.size(); ++i) {
    const double v = image.pixels.data()[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw ArgumentError("image pixel " + std::to_string(i) + " outside [0,1]: " +
                          std::to_string(v));
  }
}

int SpatialEncoderConfig::conv_count() const {
  int n = 0;
  for (const auto& s : stages) n += static_cast<int>(s.size());
  return n;
}

int SpatialEncoderConfig::output_channels() const {
  for (auto it = stages.rbegin(); it != stages.rend(); ++it)
    if (!it->empty()) return it->back();
  return input_channels;
}

int SpatialEncoderConfig::output_extent() const {
  return input_size >> static_cast<int>(stages.size());
}

void SpatialEncoderConfig::validate() const {
  if (input_size <= 0) throw ConfigError("spatial encoder: input_size must be positive");
  if (input_channels <= 0) throw ConfigError("spatial encoder: input_channels must be positive");
  if (stages.empty()) throw ConfigError("spatial encoder: at least one stage is required");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].empty()) throw ConfigError("spatial encoder: stage " + std::to_string(s) + " is empty");
    for (int w : stages[s])
      if (w <= 0) throw ConfigError("spatial encoder: channel widths must be positive");
  }
  const int divisor = 1 << stages.size();
  if (input_size % divisor != 0)
    throw ConfigError("spatial encoder: input_size " + std::to_string(input_size) +
                      " is not divisible by 2^" + std::to_string(stages.size()));
}

SpatialEncoderParams build_spatial_encoder(const SpatialEncoderConfig& config,
                                           const WeightBundle* weights, Rng& rng) {
  config.validate();
  SpatialEncoderParams params;
  params.config = config;

  std::map<std::string, const NamedArray*> by_name;
  if (weights)
    for (const auto& a : *weights) by_name[a.name] = &a;

  int in = config.input_channels;
  for (const auto& stage : config.stages) {
    for (std::size_t j = 0; j < stage.size(); ++j) {
      ConvLayer layer;
      layer.in_channels = in;
      layer.out_channels = stage[j];
      layer.pool_after = (j + 1 == stage.size());
      layer.weight.resize(layer.out_channels, in * kTaps);
      layer.bias = Vec::Zero(layer.out_channels);
      params.convs.push_back(std::move(layer));
      in = stage[j];
    }
  }

  for (std::size_t i = 0; i < params.convs.size(); ++i) {
    ConvLayer& layer = params.convs[i];
    if (!weights) {
      fill_uniform(as_span(layer.weight), std::sqrt(6.0 / (layer.in_channels * kTaps)), rng);
      continue;
    }
    const std::string wname = conv_name(i, "weight");
    const std::string bname = conv_name(i, "bias");
    auto wit = by_name.find(wname);
    auto bit = by_name.find(bname);
    if (wit == by_name.end()) throw ConfigError("weight bundle: missing " + wname);
    if (bit == by_name.end()) throw ConfigError("weight bundle: missing " + bname);
    const auto& ws = wit->second->shape;
    if (ws.size() != 4) throw ConfigError(wname + ": expected shape [out, in, 3, 3]");
    if (ws[2] != kKernel || ws[3] != kKernel)
      throw ConfigError(wname + ": kernel must be 3x3, got " + std::to_string(ws[2]) + "x" +
                        std::to_string(ws[3]));
    if (ws[0] != layer.out_channels || ws[1] != layer.in_channels)
      throw ConfigError(wname + ": shape [" + std::to_string(ws[0]) + ", " + std::to_string(ws[1]) +
                        ", 3, 3] does not match layout [" + std::to_string(layer.out_channels) +
                        ", " + std::to_string(layer.in_channels) + ", 3, 3]");
    const auto& bs = bit->second->shape;
    if (bs.size() != 1 || bs[0] != layer.out_channels)
      throw ConfigError(bname + ": expected shape [" + std::to_string(layer.out_channels) + "]");
    if (static_cast<Eigen::Index>(wit->second->values.size()) != layer.weight.size() ||
        static_cast<Eigen::Index>(bit->second->values.size()) != layer.bias.size())
      throw ConfigError(wname + ": payload size does not match declared shape");
    // [out, in, ky, kx] row-major is exactly the (out, in*9) layout.
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k)
      layer.weight.data()[k] = wit->second->values[static_cast<std::size_t>(k)];
    for (Eigen::Index k = 0; k < layer.bias.size(); ++k)
      layer.bias[k] = bit->second->values[static_cast<std::size_t>(k)];
  }
  return params;
}

SpatialEncoderParams zeros_like(const SpatialEncoderParams& params) {
  SpatialEncoderParams z = params;
  for (auto& c : z.convs) {
    c.weight.setZero();
    c.bias.setZero();
  }
  return z;
}

WeightBundle spatial_weights_to_bundle(const SpatialEncoderParams& params) {
  WeightBundle bundle;
  for (std::size_t i = 0; i < params.convs.size(); ++i) {
    const auto& c = params.convs[i];
    NamedArray w{conv_name(i, "weight"), {c.out_channels, c.in_channels, kKernel, kKernel}, {}};
    w.values.assign(c.weight.data(), c.weight.data() + c.weight.size());
    NamedArray b{conv_name(i, "bias"), {c.out_channels}, {}};
    b.values.assign(c.bias.data(), c.bias.data() + c.bias.size());
    bundle.push_back(std::move(w));
    bundle.push_back(std::move(b));
  }
  return bundle;
}

WeightBundle read_weight_bundle(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ConfigError("weight bundle: cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("weight bundle: malformed manifest: ") + e.what());
  }
  WeightBundle bundle;
  for (const auto& entry : manifest.at("arrays")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<int>>();
    std::size_t count = 1;
    for (int d : a.shape) count *= static_cast<std::size_t>(d);
    const auto file = dir / entry.at("file").get<std::string>();
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("weight bundle: cannot open " + file.string());
    a.values.resize(count);
    in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
      throw ConfigError("weight bundle: " + a.name + " payload shorter than its shape");
    bundle.push_back(std::move(a));
  }
  return bundle;
}

void write_weight_bundle(const std::filesystem::path& dir, const WeightBundle& bundle) {
  std::filesystem::create_directories(dir);
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& a : bundle) {
    const std::string file = a.name + ".bin";
    std::ofstream out(dir / file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(a.values.data()),
              static_cast<std::streamsize>(a.values.size() * sizeof(float)));
    arrays.push_back({{"name", a.name}, {"shape", a.shape}, {"file", file}, {"dtype", "float32"}});
  }
  std::ofstream mf(dir / "manifest.json");
  mf << nlohmann::json{{"format", "hydravit-weights"}, {"version", 1}, {"arrays", arrays}}.dump(2);
}

FeatureMap encode_spatial(const CxrImage& image, const SpatialEncoderParams& params,
                          SpatialTrace* trace) {
  const auto& cfg = params.config;
  if (image.height() != cfg.input_size || image.width() != cfg.input_size)
    throw DimensionError("spatial encoder expects " + std::to_string(cfg.input_size) + "x" +
                         std::to_string(cfg.input_size) + " input, got " +
                         std::to_string(image.height()) + "x" + std::to_string(image.width()));

  int extent = cfg.input_size;
  Mat x(cfg.input_channels, extent * extent);
  const Eigen::Map<const RowVec> flat(image.pixels.data(), extent * extent);
  for (int c = 0; c < cfg.input_channels; ++c) x.row(c) = flat;

  if (trace) *trace = SpatialTrace{};
  for (const auto& layer : params.convs) {
    Mat cols = im2col(x, extent);
    Mat y = layer.weight * cols;
    y.colwise() += layer.bias;
    y = y.cwiseMax(0.0);
    if (trace) {
      trace->columns.push_back(std::move(cols));
      trace->extents.push_back(extent);
    }
    if (layer.pool_after) {
      std::vector<int> argmax;
      Mat pooled = max_pool(y, extent, trace ? &argmax : nullptr);
      if (trace) {
        trace->activations.push_back(std::move(y));
        trace->pool_argmax.push_back(std::move(argmax));
      }
      x = std::move(pooled);
      extent /= 2;
    } else {
      if (trace) {
        trace->activations.push_back(y);
        trace->pool_argmax.emplace_back();
      }
      x = std::move(y);
    }
  }
  return FeatureMap{extent, static_cast<int>(x.rows()), std::move(x)};
}

void backward_spatial(const SpatialEncoderParams& params, const SpatialTrace& trace,
                      const Mat& grad_features, SpatialEncoderParams& grads) {
  Mat grad = grad_features;
  for (std::size_t i = params.convs.size(); i-- > 0;) {
    const ConvLayer& layer = params.convs[i];
    const int extent = trace.extents[i];
    const Mat& act = trace.activations[i];
    Mat grad_act;
    if (layer.pool_after) {
      grad_act = Mat::Zero(act.rows(), act.cols());
      const auto& argmax = trace.pool_argmax[i];
      const Eigen::Index pooled = grad.cols();
      for (Eigen::Index c = 0; c < grad.rows(); ++c)
        for (Eigen::Index k = 0; k < pooled; ++k)
          grad_act(c, argmax[static_cast<std::size_t>(c * pooled + k)]) += grad(c, k);
    } else {
      grad_act = std::move(grad);
    }
    // ReLU: the rectified output is zero exactly where the gate is closed.
    grad_act = (act.array() > 0.0).select(grad_act, 0.0);

    ConvLayer& g = grads.convs[i];
    g.weight.noalias() += grad_act * trace.columns[i].transpose();
    g.bias += grad_act.rowwise().sum();
    if (i > 0) {
      Mat grad_cols = layer.weight.transpose() * grad_act;
      grad = col2im(grad_cols, layer.in_channels, extent);
    }
  }
}

}  // namespace hydravit
