#include "hydravit/config.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace hydravit {

using nlohmann::json;

namespace {

std::string to_string(HeadInput h) { return h == HeadInput::kEmbeddings ? "embeddings" : "feature_map"; }

HeadInput parse_head_input(const std::string& s) {
  if (s == "embeddings") return HeadInput::kEmbeddings;
  if (s == "feature_map") return HeadInput::kFeatureMap;
  throw ConfigError("unknown head_input '" + s + "' (expected embeddings or feature_map)");
}

std::string to_string(WeightMode m) { return m == WeightMode::kProbability ? "probability" : "loss"; }

WeightMode parse_weight_mode(const std::string& s) {
  if (s == "probability") return WeightMode::kProbability;
  if (s == "loss") return WeightMode::kLoss;
  throw ConfigError("unknown weight_mode '" + s + "' (expected probability or loss)");
}

// Reads j[key] into out when present, turning type errors into ConfigError.
template <class T>
void read(const json& j, const char* key, T& out, const std::string& scope) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(scope + "." + key + ": wrong type (" + it->dump() + ")");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& scope) {
  if (!j.is_object()) throw ConfigError(scope + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok |= it.key() == k;
    if (!ok) throw ConfigError(scope + ": unknown key '" + it.key() + "'");
  }
}

std::string hex(const unsigned char* d, std::size_t n) {
  std::ostringstream os;
  for (std::size_t i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(d[i]);
  return os.str();
}

Mat matrix_from_json(const json& j, const std::string& scope) {
  if (!j.is_array()) throw ConfigError(scope + ": expected a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Mat m(rows, rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != rows)
      throw ConfigError(scope + ": expected a square matrix");
    for (Eigen::Index c = 0; c < rows; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (optimizer != "adam") throw ConfigError("train.optimizer: only 'adam' is supported");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
}

void DataConfig::validate() const {
  if (source != "manifest" && source != "synthetic")
    throw ConfigError("data.source must be 'manifest' or 'synthetic', got '" + source + "'");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("data.test_fraction must lie in (0, 1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("data.validation_fraction must lie in [0, 1)");
  if (source == "synthetic") {
    synthetic.validate();
    if (synthetic_train < 1 || synthetic_test < 1) throw ConfigError("data.synthetic_train/test must be >= 1");
  } else if (class_names.empty()) {
    throw ConfigError("data.class_names must not be empty");
  }
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  const int classes = data.source == "synthetic" ? data.synthetic.classes : static_cast<int>(data.class_names.size());
  if (classes != model.num_classes)
    throw ConfigError("model.num_classes is " + std::to_string(model.num_classes) + " but the data has " +
                      std::to_string(classes) + " classes");
  if (data.source == "synthetic" && data.synthetic.image_size != model.spatial.input_size)
    throw ConfigError("data.synthetic.image_size must equal model.spatial.input_size");
}

ExperimentConfig ExperimentConfig::synthetic_default() {
  ExperimentConfig e;
  e.model = ModelConfig::miniature(4);
  e.train.batch_size = 16;
  e.train.learning_rate = 1e-3;
  e.train.epochs = 30;
  e.train.seed = 1;
  e.data.source = "synthetic";
  e.data.class_names.clear();
  e.data.synthetic = CoocSpec::independent(4, 0.3, e.model.spatial.input_size, 7);
  e.data.synthetic.pair_boost(0, 1) = e.data.synthetic.pair_boost(1, 0) = 2.0;
  e.data.synthetic_train = 2000;
  e.data.synthetic_test = 500;
  e.data.test_fraction = 0.2;
  return e;
}

json to_json(const ModelConfig& c) {
  return json{{"spatial", {{"input_size", c.spatial.input_size},
                           {"input_channels", c.spatial.input_channels},
                           {"stages", c.spatial.stages}}},
              {"context", {{"patch_size", c.context.patch_size},
                           {"embed_dim", c.context.embed_dim},
                           {"heads", c.context.heads},
                           {"blocks", c.context.blocks},
                           {"mlp_ratio", c.context.mlp_ratio},
                           {"norm_eps", c.context.norm_eps}}},
              {"num_classes", c.num_classes},
              {"head_input", to_string(c.head_input)},
              {"variant", to_string(c.variant)},
              {"clamp_eps", c.clamp_eps},
              {"weight_mode", to_string(c.weight_mode)}};
}

json to_json(const TrainConfig& c) {
  return json{{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
              {"epochs", c.epochs},         {"seed", c.seed},
              {"optimizer", c.optimizer},   {"deterministic", c.deterministic},
              {"beta1", c.beta1},           {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},     {"grad_clip", c.grad_clip},
              {"checkpoint_every", c.checkpoint_every}};
}

json to_json(const CoocSpec& c) {
  json boost = json::array();
  for (Eigen::Index r = 0; r < c.pair_boost.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index k = 0; k < c.pair_boost.cols(); ++k) row.push_back(c.pair_boost(r, k));
    boost.push_back(row);
  }
  return json{{"classes", c.classes},       {"marginals", c.marginals},
              {"pair_boost", boost},        {"image_size", c.image_size},
              {"signal_strength", c.signal_strength}, {"noise", c.noise},
              {"patients", c.patients},     {"seed", c.seed}};
}

json to_json(const DataConfig& c) {
  return json{{"source", c.source},
              {"manifest", c.manifest},
              {"image_root", c.image_root},
              {"split_file", c.split_file},
              {"test_fraction", c.test_fraction},
              {"split_seed", c.split_seed},
              {"validation_fraction", c.validation_fraction},
              {"class_names", c.class_names},
              {"synthetic", to_json(c.synthetic)},
              {"synthetic_train", c.synthetic_train},
              {"synthetic_test", c.synthetic_test}};
}

json to_json(const ExperimentConfig& c) {
  return json{{"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"data", to_json(c.data)},
              {"spatial_weights", c.spatial_weights}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  reject_unknown(j, {"spatial", "context", "num_classes", "head_input", "variant", "clamp_eps", "weight_mode"}, "model");
  if (j.contains("spatial")) {
    const auto& s = j["spatial"];
    reject_unknown(s, {"input_size", "input_channels", "stages"}, "model.spatial");
    read(s, "input_size", c.spatial.input_size, "model.spatial");
    read(s, "input_channels", c.spatial.input_channels, "model.spatial");
    read(s, "stages", c.spatial.stages, "model.spatial");
  }
  if (j.contains("context")) {
    const auto& s = j["context"];
    reject_unknown(s, {"patch_size", "embed_dim", "heads", "blocks", "mlp_ratio", "norm_eps"}, "model.context");
    read(s, "patch_size", c.context.patch_size, "model.context");
    read(s, "embed_dim", c.context.embed_dim, "model.context");
    read(s, "heads", c.context.heads, "model.context");
    read(s, "blocks", c.context.blocks, "model.context");
    read(s, "mlp_ratio", c.context.mlp_ratio, "model.context");
    read(s, "norm_eps", c.context.norm_eps, "model.context");
  }
  read(j, "num_classes", c.num_classes, "model");
  read(j, "clamp_eps", c.clamp_eps, "model");
  std::string text;
  if (j.contains("head_input")) {
    read(j, "head_input", text, "model");
    c.head_input = parse_head_input(text);
  }
  if (j.contains("variant")) {
    read(j, "variant", text, "model");
    c.variant = parse_variant(text);
  }
  if (j.contains("weight_mode")) {
    read(j, "weight_mode", text, "model");
    c.weight_mode = parse_weight_mode(text);
  }
  return c;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  reject_unknown(j, {"batch_size", "learning_rate", "epochs", "seed", "optimizer", "deterministic", "beta1", "beta2",
                     "adam_eps", "grad_clip", "checkpoint_every"},
                 "train");
  read(j, "batch_size", c.batch_size, "train");
  read(j, "learning_rate", c.learning_rate, "train");
  read(j, "epochs", c.epochs, "train");
  read(j, "seed", c.seed, "train");
  read(j, "optimizer", c.optimizer, "train");
  read(j, "deterministic", c.deterministic, "train");
  read(j, "beta1", c.beta1, "train");
  read(j, "beta2", c.beta2, "train");
  read(j, "adam_eps", c.adam_eps, "train");
  read(j, "grad_clip", c.grad_clip, "train");
  read(j, "checkpoint_every", c.checkpoint_every, "train");
  return c;
}

namespace {

CoocSpec cooc_from_json(const json& j, CoocSpec c) {
  reject_unknown(j, {"classes", "marginals", "pair_boost", "image_size", "signal_strength", "noise", "patients", "seed"},
                 "data.synthetic");
  const int before = c.classes;
  read(j, "classes", c.classes, "data.synthetic");
  if (c.classes != before && c.classes > 0) {
    // Resize defaults so that a bare class-count change stays valid.
    const double p = c.marginals.empty() ? 0.3 : c.marginals.front();
    c.marginals.assign(static_cast<std::size_t>(c.classes), p);
    c.pair_boost = Mat::Ones(c.classes, c.classes);
  }
  read(j, "marginals", c.marginals, "data.synthetic");
  if (j.contains("pair_boost")) c.pair_boost = matrix_from_json(j["pair_boost"], "data.synthetic.pair_boost");
  read(j, "image_size", c.image_size, "data.synthetic");
  read(j, "signal_strength", c.signal_strength, "data.synthetic");
  read(j, "noise", c.noise, "data.synthetic");
  read(j, "patients", c.patients, "data.synthetic");
  read(j, "seed", c.seed, "data.synthetic");
  return c;
}

DataConfig data_config_from_json(const json& j, DataConfig c) {
  reject_unknown(j, {"source", "manifest", "image_root", "split_file", "test_fraction", "split_seed",
                     "validation_fraction", "class_names",
                     "synthetic", "synthetic_train", "synthetic_test"},
                 "data");
  read(j, "source", c.source, "data");
  read(j, "manifest", c.manifest, "data");
  read(j, "image_root", c.image_root, "data");
  read(j, "split_file", c.split_file, "data");
  read(j, "test_fraction", c.test_fraction, "data");
  read(j, "split_seed", c.split_seed, "data");
  read(j, "validation_fraction", c.validation_fraction, "data");
  read(j, "class_names", c.class_names, "data");
  if (j.contains("synthetic")) c.synthetic = cooc_from_json(j["synthetic"], c.synthetic);
  read(j, "synthetic_train", c.synthetic_train, "data");
  read(j, "synthetic_test", c.synthetic_test, "data");
  return c;
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j, ExperimentConfig c) {
  reject_unknown(j, {"model", "train", "data", "spatial_weights"}, "config");
  if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
  if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
  if (j.contains("data")) c.data = data_config_from_json(j["data"], c.data);
  read(j, "spatial_weights", c.spatial_weights, "config");
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return experiment_from_json(j);
}

void save_experiment(const std::string& path, const ExperimentConfig& config) {
  std::ofstream(path) << to_json(config).dump(2) << '\n';
}

json apply_overrides(json j, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);

    json::json_pointer ptr;
    if (key.find('.') != std::string::npos) {
      std::string path;
      std::istringstream parts(key);
      for (std::string part; std::getline(parts, part, '.');) path += "/" + part;
      ptr = json::json_pointer(path);
      if (!j.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
    } else {
      std::vector<json::json_pointer> hits;
      std::function<void(const json&, const json::json_pointer&)> walk = [&](const json& node,
                                                                              const json::json_pointer& at) {
        if (!node.is_object()) return;
        for (auto it = node.begin(); it != node.end(); ++it) {
          if (it.key() == key) hits.push_back(at / it.key());
          walk(it.value(), at / it.key());
        }
      };
      walk(j, json::json_pointer());
      if (hits.empty()) throw ConfigError("unknown config key '" + key + "'");
      if (hits.size() > 1) throw ConfigError("ambiguous config key '" + key + "'; use a dotted path");
      ptr = hits.front();
    }

    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    const json& old = j.at(ptr);
    const bool compatible = (old.is_number() && value.is_number()) || old.type() == value.type();
    if (!compatible) throw ConfigError("config key '" + key + "' expects " + old.type_name() + ", got '" + text + "'");
    j.at(ptr) = value;
  }
  return j;
}

std::string sha1_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("SHA-1 digest failed");
  return hex(digest, length);
}

std::string git_blob_hash(const std::string& bytes) {
  std::string framed = "blob " + std::to_string(bytes.size());
  framed.push_back('\0');
  return sha1_hex(framed + bytes);
}

std::string git_blob_hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return git_blob_hash(os.str());
}

std::string config_hash(const json& j) { return sha1_hex(j.dump()); }

}  // namespace hydravit
