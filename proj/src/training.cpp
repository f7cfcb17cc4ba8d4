#include "hydravit/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace hydravit {
namespace {

constexpr std::uint64_t kShuffleSalt = 0x9e3779b97f4a7c15ULL;
constexpr char kMagic[8] = {'H', 'Y', 'D', 'R', 'A', 'C', 'K', 'P'};
const std::vector<std::string> kSections = {"config", "state", "params", "adam_m", "adam_v", "metrics"};

struct ParamRef {
  std::string name;
  std::span<double> data;
};

std::vector<ParamRef> params_of(HydraModel& m) {
  std::vector<ParamRef> out;
  visit_parameters(m, [&](const std::string& name, std::span<double> s) { out.push_back({name, s}); });
  return out;
}


bool finite(const Vec& v) { return v.allFinite(); }

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NonFiniteError("non-finite value in " + what);
}

std::string g17(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Little-endian byte packing.
template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_section(std::string& out, const std::string& name, const std::string& payload) {
  put_string(out, name);
  put<std::uint64_t>(out, payload.size());
  out += payload;
}

std::string pack_arrays(const HydraModel& m) {
  std::string out;
  auto& mm = const_cast<HydraModel&>(m);
  const auto refs = params_of(mm);
  put<std::uint64_t>(out, refs.size());
  for (const auto& r : refs) {
    put_string(out, r.name);
    put<std::uint64_t>(out, r.data.size());
    out.append(reinterpret_cast<const char*>(r.data.data()), r.data.size() * sizeof(double));
  }
  return out;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t pos = 0) : bytes_(bytes), pos_(pos) {}

  bool take(void* dst, std::size_t n) {
    if (bytes_.size() - pos_ < n) return false;
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
    return true;
  }
  template <class T>
  bool get(T& v) {
    return take(&v, sizeof(T));
  }
  bool get_string(std::string& s) {
    std::uint32_t n = 0;
    if (!get(n) || bytes_.size() - pos_ < n) return false;
    s.assign(bytes_.data() + pos_, n);
    pos_ += n;
    return true;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_;
};

std::map<std::string, std::vector<double>> unpack_arrays(const std::string& payload, const std::string& section) {
  Reader r(payload);
  std::uint64_t count = 0;
  if (!r.get(count)) throw CheckpointTruncatedError("checkpoint section '" + section + "' is truncated");
  std::map<std::string, std::vector<double>> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name;
    std::uint64_t n = 0;
    if (!r.get_string(name) || !r.get(n)) throw CheckpointTruncatedError("checkpoint section '" + section + "' is truncated");
    std::vector<double> v(n);
    if (!r.take(v.data(), n * sizeof(double)))
      throw CheckpointTruncatedError("checkpoint section '" + section + "' is truncated in array '" + name + "'");
    out.emplace(std::move(name), std::move(v));
  }
  return out;
}

void restore_arrays(HydraModel& m, std::map<std::string, std::vector<double>> arrays, const std::string& section) {
  for (auto& r : params_of(m)) {
    auto it = arrays.find(r.name);
    if (it == arrays.end())
      throw CheckpointShapeError("shape mismatch: checkpoint " + section + " has no array '" + r.name +
                                 "' required by the configured model");
    if (it->second.size() != r.data.size())
      throw CheckpointShapeError("shape mismatch for '" + r.name + "' in " + section + ": checkpoint holds " +
                                 std::to_string(it->second.size()) + " values, model expects " +
                                 std::to_string(r.data.size()));
    std::copy(it->second.begin(), it->second.end(), r.data.begin());
    arrays.erase(it);
  }
  if (!arrays.empty())
    throw CheckpointShapeError("shape mismatch: checkpoint " + section + " has array '" + arrays.begin()->first +
                               "' that the configured model lacks");
}

nlohmann::json metrics_json(const std::vector<EpochMetrics>& h) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : h)
    j.push_back({e.epoch, e.loss.bce_mean, e.loss.mlce, e.loss.consistency, e.loss.total, e.alpha, e.beta, e.w_min,
                 e.w_max, std::isnan(e.val_auc) ? nlohmann::json(nullptr) : nlohmann::json(e.val_auc)});
  return j;
}

std::vector<EpochMetrics> metrics_from_json(const nlohmann::json& j) {
  std::vector<EpochMetrics> h;
  for (const auto& row : j) {
    EpochMetrics e;
    e.epoch = row[0].get<int>();
    e.loss = {row[1].get<double>(), row[2].get<double>(), row[3].get<double>(), row[4].get<double>()};
    e.alpha = row[5].get<double>();
    e.beta = row[6].get<double>();
    e.w_min = row[7].get<double>();
    e.w_max = row[8].get<double>();
    if (!row[9].is_null()) e.val_auc = row[9].get<double>();
    h.push_back(e);
  }
  return h;
}

}  // namespace

TrainState init_train_state(const ModelConfig& model, const TrainConfig& train, const ClassCounts* counts,
                            const WeightBundle* spatial_weights) {
  model.validate();
  train.validate();
  Rng init(train.seed);
  TrainState s;
  s.model = build_model(model, init, counts, spatial_weights);
  s.adam_m = zeros_like(s.model);
  s.adam_v = zeros_like(s.model);
  s.rng = Rng(train.seed ^ kShuffleSalt);
  return s;
}

LossBreakdown train_step(TrainState& state, const TrainConfig& config, std::span<const Example* const> batch) {
  if (batch.empty()) throw ArgumentError("train_step: empty batch");
  const int C = state.model.config.num_classes;
  HydraModel grads = zeros_like(state.model);
  LossBreakdown total;
  std::vector<double> labels(static_cast<std::size_t>(C));
  for (const Example* ex : batch) {
    if (static_cast<int>(ex->labels.size()) != C)
      throw DimensionError("sample '" + ex->sample_id + "' has " + std::to_string(ex->labels.size()) +
                           " labels, model has " + std::to_string(C) + " classes");
    for (int c = 0; c < C; ++c) labels[static_cast<std::size_t>(c)] = ex->labels[static_cast<std::size_t>(c)];
    BranchOutputs out;
    const LossBreakdown l = sample_loss(state.model, ex->image, labels, &grads, &out);
    if (!finite(out.individual)) throw NonFiniteError("non-finite value in outputs.individual for sample '" + ex->sample_id + "'");
    if (!finite(out.aggregate)) throw NonFiniteError("non-finite value in outputs.aggregate for sample '" + ex->sample_id + "'");
    require_finite(l.bce_mean, "loss.bce_mean");
    require_finite(l.mlce, "loss.mlce");
    require_finite(l.consistency, "loss.consistency");
    total += l;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total /= static_cast<double>(batch.size());

  auto g = params_of(grads);
  double norm2 = 0.0;
  for (auto& r : g)
    for (double& v : r.data) {
      v *= inv;
      norm2 += v * v;
    }
  for (const auto& r : g)
    for (double v : r.data)
      if (!std::isfinite(v)) throw NonFiniteError("non-finite value in gradient of " + r.name);
  double scale = 1.0;
  if (config.grad_clip > 0.0 && std::sqrt(norm2) > config.grad_clip) scale = config.grad_clip / std::sqrt(norm2);

  auto p = params_of(state.model);
  auto m = params_of(state.adam_m);
  auto v = params_of(state.adam_v);
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto& pk = p[k].data;
    auto& mk = m[k].data;
    auto& vk = v[k].data;
    const auto& gk = g[k].data;
    for (std::size_t i = 0; i < pk.size(); ++i) {
      const double gi = gk[i] * scale;
      mk[i] = config.beta1 * mk[i] + (1.0 - config.beta1) * gi;
      vk[i] = config.beta2 * vk[i] + (1.0 - config.beta2) * gi * gi;
      pk[i] -= config.learning_rate * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + config.adam_eps);
    }
    for (double x : pk)
      if (!std::isfinite(x)) throw NonFiniteError("non-finite value in parameter " + p[k].name + " after update");
  }
  ++state.step;
  return total;
}

LossBreakdown train_step(TrainState& state, const TrainConfig& config, const Dataset& batch) {
  std::vector<const Example*> ptrs;
  for (const auto& e : batch) ptrs.push_back(&e);
  return train_step(state, config, ptrs);
}

Mat score_dataset(const HydraModel& model, const Dataset& data) {
  Mat scores(static_cast<Eigen::Index>(data.size()), model.config.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i)
    scores.row(static_cast<Eigen::Index>(i)) = inference_scores(model, forward(model, data[i].image)).transpose();
  return scores;
}

AucReport evaluate_dataset(const HydraModel& model, const Dataset& data, const std::vector<std::string>& class_names,
                           TieMode mode) {
  const Mat scores = score_dataset(model, data);
  const auto C = static_cast<std::size_t>(model.config.num_classes);
  std::vector<std::vector<double>> s(C);
  std::vector<std::vector<int>> y(C);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < data.size(); ++i) {
      s[c].push_back(scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
      y[c].push_back(data[i].labels[c]);
    }
  return macro_report(s, y, class_names, mode);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,bce_mean,mlce,consistency,total,alpha,beta,w_min,w_max,val_auc\n";
  for (const auto& e : history)
    out += std::to_string(e.epoch) + ',' + g17(e.loss.bce_mean) + ',' + g17(e.loss.mlce) + ',' +
           g17(e.loss.consistency) + ',' + g17(e.loss.total) + ',' + g17(e.alpha) + ',' + g17(e.beta) + ',' +
           g17(e.w_min) + ',' + g17(e.w_max) + ',' + g17(e.val_auc) + '\n';
  write_atomic(path, out);
}

void train(TrainState& state, const TrainConfig& config, const Dataset& data, const TrainHooks& hooks) {
  config.validate();
  if (config.epochs > state.epoch && data.empty()) throw ArgumentError("train: empty training set");
  std::vector<std::size_t> order(data.size());
  std::vector<const Example*> batch;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  while (state.epoch < config.epochs) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);
    LossBreakdown sum;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) batch.push_back(&data[order[k]]);
      LossBreakdown l = train_step(state, config, batch);
      l.bce_mean *= static_cast<double>(batch.size());
      l.mlce *= static_cast<double>(batch.size());
      l.consistency *= static_cast<double>(batch.size());
      l.total *= static_cast<double>(batch.size());
      sum += l;
    }
    sum /= static_cast<double>(data.size());
    ++state.epoch;

    EpochMetrics em;
    em.epoch = static_cast<int>(state.epoch);
    em.loss = sum;
    em.alpha = state.model.weights.alpha;
    em.beta = state.model.weights.beta;
    em.w_min = state.model.weights.w.size() ? state.model.weights.w.minCoeff() : 0.0;
    em.w_max = state.model.weights.w.size() ? state.model.weights.w.maxCoeff() : 0.0;
    bool improved = false;
    if (hooks.validation && !hooks.validation->empty()) {
      try {
        em.val_auc = evaluate_dataset(state.model, *hooks.validation, hooks.class_names).macro_mean;
        if (em.val_auc > state.best_val_auc) {
          state.best_val_auc = em.val_auc;
          improved = true;
        }
      } catch (const ReportError&) {
      }
    }
    state.history.push_back(em);

    if (!hooks.metrics_csv.empty()) write_metrics_csv(hooks.metrics_csv, state.history);
    if (!hooks.checkpoint_dir.empty()) {
      const bool due = config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0;
      if (due || state.epoch == config.epochs) save_checkpoint(hooks.checkpoint_dir / "last.ckpt", state, config, hooks.class_names);
      if (improved) save_checkpoint(hooks.checkpoint_dir / "best.ckpt", state, config, hooks.class_names);
    }
    if (hooks.on_epoch) hooks.on_epoch(em);
  }
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& train,
                     const std::vector<std::string>& class_names) {
  const nlohmann::json config{
      {"model", to_json(state.model.config)}, {"train", to_json(train)}, {"class_names", class_names}};
  std::ostringstream rng_text;
  rng_text << state.rng;
  const nlohmann::json st{{"epoch", state.epoch},
                          {"step", state.step},
                          {"rng", rng_text.str()},
                          {"best_val_auc", std::isfinite(state.best_val_auc) ? nlohmann::json(state.best_val_auc)
                                                                             : nlohmann::json(nullptr)},
                          {"config_hash", config_hash(config)}};

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_section(out, "config", config.dump());
  put_section(out, "state", st.dump());
  put_section(out, "params", pack_arrays(state.model));
  put_section(out, "adam_m", pack_arrays(state.adam_m));
  put_section(out, "adam_v", pack_arrays(state.adam_v));
  put_section(out, "metrics", metrics_json(state.history).dump());
  write_atomic(path, out);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();

  Reader r(bytes);
  char magic[sizeof kMagic];
  if (!r.take(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw CheckpointError(path.string() + " is not a checkpoint file");
  std::uint32_t version = 0;
  if (!r.get(version)) throw CheckpointTruncatedError(path.string() + ": truncated before the version field");
  if (version != kCheckpointVersion)
    throw CheckpointVersionError(path.string() + ": checkpoint version " + std::to_string(version) +
                                 ", this build reads version " + std::to_string(kCheckpointVersion));

  std::map<std::string, std::string> sections;
  for (const auto& expected_name : kSections) {
    std::string name;
    std::uint64_t n = 0;
    if (!r.get_string(name) || !r.get(n) || bytes.size() - r.pos() < n)
      throw CheckpointTruncatedError(path.string() + ": truncated; missing section '" + expected_name + "'");
    if (name != expected_name)
      throw CheckpointError(path.string() + ": expected section '" + expected_name + "', found '" + name + "'");
    std::string payload(n, '\0');
    r.take(payload.data(), n);
    sections[name] = std::move(payload);
  }

  LoadedCheckpoint out;
  nlohmann::json config, st;
  try {
    config = nlohmann::json::parse(sections["config"]);
    st = nlohmann::json::parse(sections["state"]);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header sections: " + e.what());
  }
  out.config_hash = st.at("config_hash").get<std::string>();
  if (out.config_hash != config_hash(config)) throw CheckpointError(path.string() + ": config hash mismatch");
  out.model_config = model_config_from_json(config.at("model"));
  out.train_config = train_config_from_json(config.at("train"));
  if (config.contains("class_names")) out.class_names = config["class_names"].get<std::vector<std::string>>();

  const ModelConfig& build_config = expected ? *expected : out.model_config;
  Rng scratch(0);
  out.state.model = build_model(build_config, scratch);
  out.state.adam_m = zeros_like(out.state.model);
  out.state.adam_v = zeros_like(out.state.model);
  restore_arrays(out.state.model, unpack_arrays(sections["params"], "params"), "params");
  restore_arrays(out.state.adam_m, unpack_arrays(sections["adam_m"], "adam_m"), "adam_m");
  restore_arrays(out.state.adam_v, unpack_arrays(sections["adam_v"], "adam_v"), "adam_v");
  out.state.epoch = st.at("epoch").get<std::int64_t>();
  out.state.step = st.at("step").get<std::int64_t>();
  std::istringstream rng_text(st.at("rng").get<std::string>());
  rng_text >> out.state.rng;
  if (!st.at("best_val_auc").is_null()) out.state.best_val_auc = st.at("best_val_auc").get<double>();
  out.state.history = metrics_from_json(nlohmann::json::parse(sections["metrics"]));
  return out;
}

}  // namespace hydravit
