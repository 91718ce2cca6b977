#include "cdstraj/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>

#include "cdstraj/decoder.hpp"
#include "cdstraj/errors.hpp"
#include "cdstraj/losses.hpp"
#include "cdstraj/rng.hpp"
#include "cdstraj/stencoder.hpp"

namespace cdstraj {

using nlohmann::json;

void TrainConfig::validate() const {
  if (stage1_epochs + stage2_epochs == 0) throw ConfigError("need at least one training epoch");
  if (batch_size == 0) throw ConfigError("batchSize must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learningRate must be positive");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("gradClipNorm must be positive");
  if (!(adam_betas[0] >= 0.0 && adam_betas[0] < 1.0 && adam_betas[1] >= 0.0 && adam_betas[1] < 1.0)) {
    throw ConfigError("adamBetas must lie in [0, 1)");
  }
  if (!(nll_weight_alpha > 0.0)) throw ConfigError("nllWeightAlpha must be positive");
  if (diffusion_loss_weight < 0.0) throw ConfigError("diffusionLossWeight must be non-negative");
  model.validate();
}

json to_json(const ModelConfig& c) {
  return json{{"d", c.d},
              {"n_heads", c.n_heads},
              {"d_c", c.d_c},
              {"n_max", c.n_max},
              {"gamma", c.gamma},
              {"beta_min", c.beta_min},
              {"beta_max", c.beta_max},
              {"K", c.k_samples},
              {"leaky_slope", c.leaky_slope},
              {"position_scale", c.position_scale},
              {"ablation", std::string(to_string(c.ablation))}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  try {
    if (j.contains("d")) c.d = j["d"].get<std::size_t>();
    if (j.contains("n_heads")) c.n_heads = j["n_heads"].get<std::size_t>();
    if (j.contains("d_c")) c.d_c = j["d_c"].get<std::size_t>();
    if (j.contains("n_max")) c.n_max = j["n_max"].get<std::size_t>();
    if (j.contains("gamma")) c.gamma = j["gamma"].get<std::size_t>();
    if (j.contains("beta_min")) c.beta_min = j["beta_min"].get<double>();
    if (j.contains("beta_max")) c.beta_max = j["beta_max"].get<double>();
    if (j.contains("K")) c.k_samples = j["K"].get<std::size_t>();
    if (j.contains("leaky_slope")) c.leaky_slope = j["leaky_slope"].get<double>();
    if (j.contains("position_scale")) c.position_scale = j["position_scale"].get<double>();
    if (j.contains("ablation")) c.ablation = parse_ablation(j["ablation"].get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  return c;
}

json to_json(const TrainConfig& c) {
  json j = to_json(c.model);
  j["stage1Epochs"] = c.stage1_epochs;
  j["stage2Epochs"] = c.stage2_epochs;
  j["batchSize"] = c.batch_size;
  j["learningRate"] = c.learning_rate;
  j["adamBetas"] = {c.adam_betas[0], c.adam_betas[1]};
  j["gradClipNorm"] = c.grad_clip_norm;
  j["nllWeightAlpha"] = c.nll_weight_alpha;
  j["diffusionLossWeight"] = c.diffusion_loss_weight;
  j["seed"] = c.seed;
  j["teacherMode"] = c.teacher_mode;
  j["split"] = {c.split.train, c.split.val, c.split.test};
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    if (j.contains("stage1Epochs")) c.stage1_epochs = j["stage1Epochs"].get<std::size_t>();
    if (j.contains("stage2Epochs")) c.stage2_epochs = j["stage2Epochs"].get<std::size_t>();
    if (j.contains("batchSize")) c.batch_size = j["batchSize"].get<std::size_t>();
    if (j.contains("learningRate")) c.learning_rate = j["learningRate"].get<double>();
    if (j.contains("adamBetas")) c.adam_betas = {j["adamBetas"].at(0).get<double>(), j["adamBetas"].at(1).get<double>()};
    if (j.contains("gradClipNorm")) c.grad_clip_norm = j["gradClipNorm"].get<double>();
    if (j.contains("nllWeightAlpha")) c.nll_weight_alpha = j["nllWeightAlpha"].get<double>();
    if (j.contains("diffusionLossWeight")) c.diffusion_loss_weight = j["diffusionLossWeight"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("teacherMode")) c.teacher_mode = j["teacherMode"].get<bool>();
    if (j.contains("split")) {
      c.split = {j["split"].at(0).get<double>(), j["split"].at(1).get<double>(), j["split"].at(2).get<double>()};
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.model = model_config_from_json(j, c.model);
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

std::string config_hash(const TrainConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.model = ModelConfig::tiny();
  c.stage1_epochs = 40;
  c.stage2_epochs = 40;
  c.batch_size = 8;
  c.learning_rate = 3e-3;
  return c;
}

std::string log_csv_header() { return "epoch,stage,train_loss,val_rmse_1s,val_rmse_2s,val_rmse_3s,val_rmse_4s,val_rmse_5s"; }

std::string log_csv_row(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%d,%.9g,%.6f,%.6f,%.6f,%.6f,%.6f", r.epoch, r.stage, r.train_loss,
                r.val_rmse[0], r.val_rmse[1], r.val_rmse[2], r.val_rmse[3], r.val_rmse[4]);
  return buf;
}

Var scene_loss(Tape& tape, const ParamStore& params, const TrainConfig& config, const NoiseSchedule& sched,
               const Scene& scene, int stage, std::uint64_t seed) {
  const ModelConfig& mc = config.model;
  const HistoryEncoding hist = encode_histories(tape, params, mc, scene);
  Var latent = tape.constant(Tensor::zeros({mc.n_max, mc.d_c}));
  std::optional<Var> diff;
  if (mc.ablation != Ablation::Diffusion) {
    if (config.teacher_mode) {
      latent = future_feature_encode(tape, params, mc, scene.neighbor_futures, scene.neighbor_mask);
    } else {
      const SamplingContext ctx{hist.target.value(), hist.neighbors.value(), scene.neighbor_mask};
      latent = tape.constant(reverse_sample(ctx, 1, sched, params, mc, derive_seed(seed, 2)).front());
    }
    if (config.diffusion_loss_weight > 0.0) {
      diff = scale(diffusion_loss(tape, params, mc, sched, scene, hist, derive_seed(seed, 1)),
                   config.diffusion_loss_weight);
    }
  }
  const EncodedScene enc = encode_scene(tape, params, mc, scene, hist, latent);
  const TrajectoryVars traj = decode_rollout(tape, params, mc, enc);
  Var loss = stage == 1 ? mse_loss(traj, scene.target_future) : nll_loss(traj, scene.target_future, config.nll_weight_alpha);
  return diff ? add(loss, *diff) : loss;
}

const GradcheckResult& PipelineGradcheck::worst() const {
  const GradcheckResult* w = &mse;
  if (nll.max_rel_error > w->max_rel_error) w = &nll;
  if (diffusion.max_rel_error > w->max_rel_error) w = &diffusion;
  return *w;
}

PipelineGradcheck pipeline_gradcheck(const TrainConfig& config, std::uint64_t seed, double h) {
  config.validate();
  const ModelConfig& mc = config.model;
  const NoiseSchedule sched = make_schedule(mc);
  SyntheticOptions opts;
  opts.n_max = mc.n_max;
  const Scene scene = gen_synthetic(SyntheticKind::BrakingInteraction, 1, seed, opts).front();
  ParamStore params = init_params(mc, derive_seed(seed, 1));
  const std::uint64_t loss_seed = derive_seed(seed, 2);

  auto trajectory = [&](Tape& tape, const ParamStore& p) {
    const HistoryEncoding hist = encode_histories(tape, p, mc, scene);
    Var latent = mc.ablation == Ablation::Diffusion
                     ? tape.constant(Tensor::zeros({mc.n_max, mc.d_c}))
                     : future_feature_encode(tape, p, mc, scene.neighbor_futures, scene.neighbor_mask);
    return decode_rollout(tape, p, mc, encode_scene(tape, p, mc, scene, hist, latent));
  };
  const LossBuilder mse = [&](Tape& tape, const ParamStore& p) {
    return mse_loss(trajectory(tape, p), scene.target_future);
  };
  const LossBuilder nll = [&](Tape& tape, const ParamStore& p) {
    return nll_loss(trajectory(tape, p), scene.target_future, config.nll_weight_alpha);
  };
  const LossBuilder diff = [&](Tape& tape, const ParamStore& p) {
    return diffusion_loss(tape, p, mc, sched, scene, encode_histories(tape, p, mc, scene), loss_seed);
  };
  auto value = [&](const LossBuilder& f) {
    Tape tape(false);
    return f(tape, params).value().item();
  };

  PipelineGradcheck r;
  r.loss_mse = value(mse);
  r.loss_nll = value(nll);
  r.mse = finite_diff_gradcheck(mse, params, h);
  r.nll = finite_diff_gradcheck(nll, params, h);
  if (mc.ablation != Ablation::Diffusion) {
    r.loss_diffusion = value(diff);
    r.diffusion = finite_diff_gradcheck(diff, params, h);
  }
  return r;
}

namespace {

json tensor_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.storage()}}; }

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

json record_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch}, {"stage", r.stage}, {"train_loss", r.train_loss}, {"val_rmse", r.val_rmse},
              {"val_nll", r.val_nll}};
}

EpochRecord record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.stage = j.at("stage").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_rmse = j.at("val_rmse").get<std::array<double, kHorizons>>();
  r.val_nll = j.at("val_nll").get<double>();
  return r;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  json j;
  j["format"] = "cdstraj-checkpoint";
  j["version"] = Checkpoint::kVersion;
  j["config"] = to_json(c.config);
  j["config_hash"] = c.hash;
  j["epoch"] = c.epoch;
  j["rng_state"] = c.rng_state;
  j["best_val_rmse_5s"] = c.best_val_rmse;
  j["best_epoch"] = c.best_epoch;
  json params = json::object();
  for (const auto& [name, t] : c.params.entries()) params[name] = tensor_json(t);
  j["params"] = std::move(params);
  json m = json::object(), v = json::object();
  for (const auto& [name, t] : c.adam.m) m[name] = tensor_json(t);
  for (const auto& [name, t] : c.adam.v) v[name] = tensor_json(t);
  j["adam"] = {{"step", c.adam.step}, {"m", std::move(m)}, {"v", std::move(v)}};
  json log = json::array();
  for (const auto& r : c.log) log.push_back(record_json(r));
  j["log"] = std::move(log);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << j.dump();
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  try {
    const json j = json::parse(in);
    if (j.value("format", "") != "cdstraj-checkpoint") throw DataError(path.string() + " is not a checkpoint");
    if (j.at("version").get<int>() != Checkpoint::kVersion) {
      throw DataError("unsupported checkpoint version " + j.at("version").dump());
    }
    Checkpoint c;
    c.config = train_config_from_json(j.at("config"));
    c.hash = j.at("config_hash").get<std::string>();
    c.epoch = j.at("epoch").get<std::size_t>();
    c.rng_state = j.at("rng_state").get<std::string>();
    c.best_val_rmse = j.at("best_val_rmse_5s").get<double>();
    c.best_epoch = j.at("best_epoch").get<std::size_t>();
    for (const auto& [name, t] : j.at("params").items()) c.params.add(name, tensor_from_json(t));
    c.adam.step = j.at("adam").at("step").get<std::uint64_t>();
    for (const auto& [name, t] : j.at("adam").at("m").items()) c.adam.m.emplace(name, tensor_from_json(t));
    for (const auto& [name, t] : j.at("adam").at("v").items()) c.adam.v.emplace(name, tensor_from_json(t));
    for (const auto& r : j.at("log")) c.log.push_back(record_from_json(r));
    return c;
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

TrainResult train(const DatasetSplit& data, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (data.train.empty()) throw ConfigError("training split is empty");
  const ModelConfig& mc = config.model;
  const NoiseSchedule sched = make_schedule(mc);
  const std::size_t total_epochs = config.stage1_epochs + config.stage2_epochs;
  const AdamConfig adam_cfg{config.learning_rate, config.adam_betas[0], config.adam_betas[1], 1e-8};

  Checkpoint state;
  state.config = config;
  state.hash = config_hash(config);
  Rng rng(config.seed);
  if (options.resume_from) {
    state = load_checkpoint(*options.resume_from);
    if (state.hash != config_hash(config)) {
      throw ConfigError("checkpoint " + options.resume_from->string() + " was produced with a different config");
    }
    rng.set_state(state.rng_state);
  } else {
    state.params = init_params(mc, derive_seed(config.seed, 0xC0FFEE));
  }
  ParamStore best = state.params;
  if (options.resume_from && options.checkpoint_path) {
    const auto best_path = options.checkpoint_path->string() + ".best";
    if (std::filesystem::exists(best_path)) best = load_checkpoint(best_path).params;
  }

  std::ofstream log_out;
  if (options.log_path) {
    const bool append = options.resume_from.has_value() && std::filesystem::exists(*options.log_path);
    log_out.open(*options.log_path, append ? std::ios::app : std::ios::trunc);
    if (!log_out) throw DataError("cannot write log " + options.log_path->string());
    if (!append) log_out << log_csv_header() << '\n';
  }

  const std::size_t last_epoch = std::min(total_epochs, options.stop_after_epoch.value_or(total_epochs));
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t epoch = state.epoch + 1; epoch <= last_epoch; ++epoch) {
    const int stage = epoch <= config.stage1_epochs ? 1 : 2;
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }

    double loss_sum = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      state.params.zero_grads();
      for (std::size_t i = start; i < end; ++i) {
        const Scene& scene = data.train[order[i]];
        Tape tape;
        Var loss = scene_loss(tape, state.params, config, sched, scene, stage, rng.next_u64());
        const double value = loss.value().item();
        if (!std::isfinite(value)) {
          throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                             " (scene " + scene.scene_id + ")");
        }
        loss_sum += value;
        backward(scale(loss, inv_b), state.params);
      }
      if (!std::isfinite(grad_global_norm(state.params))) {
        throw NumericError("non-finite gradient in epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
      }
      clip_grad_norm(state.params, config.grad_clip_norm);
      adam_step(state.params, state.adam, adam_cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    if (!data.val.empty()) {
      const Evaluation ev = evaluate(data.val, state.params, mc, options.val_k, config.seed, "val");
      rec.val_rmse = ev.report.rmse_per_second;
      rec.val_nll = ev.mean_nll;
    }
    state.log.push_back(rec);
    state.epoch = epoch;
    state.rng_state = rng.state();

    const double score = data.val.empty() ? rec.train_loss : rec.val_rmse[kHorizons - 1];
    const bool improved = state.best_val_rmse < 0.0 || score < state.best_val_rmse;
    if (improved) {
      state.best_val_rmse = score;
      state.best_epoch = epoch;
      best = state.params;
    }
    if (log_out.is_open()) log_out << log_csv_row(rec) << '\n' << std::flush;
    if (options.checkpoint_path) {
      save_checkpoint(*options.checkpoint_path, state);
      if (improved) save_checkpoint(options.checkpoint_path->string() + ".best", state);
    }
    if (options.verbose) std::cerr << log_csv_row(rec) << '\n';
  }

  TrainResult result;
  result.log = state.log;
  result.params = std::move(state.params);
  result.best_params = std::move(best);
  result.best_epoch = state.best_epoch;
  return result;
}

}  // namespace cdstraj
