#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdstraj/data.hpp"
#include "cdstraj/diffusion.hpp"
#include "cdstraj/gradcheck.hpp"
#include "cdstraj/metrics.hpp"
#include "cdstraj/model.hpp"
#include "cdstraj/optim.hpp"

namespace cdstraj {

struct TrainConfig {
  std::size_t stage1_epochs = 40;
  std::size_t stage2_epochs = 40;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::array<double, 2> adam_betas{0.9, 0.999};
  double grad_clip_norm = 5.0;
  double nll_weight_alpha = 1.0;
  double diffusion_loss_weight = 1.0;
  std::uint64_t seed = 0;
  /// Feed the encoder the clean latent of the ground-truth neighbor futures
  /// during training instead of a sampled one.
  bool teacher_mode = true;
  SplitFractions split;
  ModelConfig model;

  void validate() const;
};

/// JSON keys: stage1Epochs, stage2Epochs, batchSize, learningRate, adamBetas,
/// gradClipNorm, nllWeightAlpha, diffusionLossWeight, seed, teacherMode,
/// split, and model keys d, n_heads, d_c, n_max, gamma, beta_min, beta_max, K,
/// leaky_slope, position_scale, ablation. Missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path);
/// FNV-1a over the canonical JSON dump.
std::string config_hash(const TrainConfig& c);

/// Tiny default used for desk-scale runs: ModelConfig::tiny() with settings
/// that converge on the synthetic scenarios.
TrainConfig tiny_train_config();

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based, counted across both stages
  int stage = 1;
  double train_loss = 0.0;
  std::array<double, kHorizons> val_rmse{};
  double val_nll = 0.0;
};

/// CSV header: epoch,stage,train_loss,val_rmse_1s,...,val_rmse_5s
std::string log_csv_header();
std::string log_csv_row(const EpochRecord& r);

/// Per-scene training objective: trajectory term (MSE in stage 1, weighted
/// NLL in stage 2) plus diffusionLossWeight times the epsilon loss.
Var scene_loss(Tape& tape, const ParamStore& params, const TrainConfig& config, const NoiseSchedule& sched,
               const Scene& scene, int stage, std::uint64_t seed);

struct PipelineGradcheck {
  GradcheckResult mse;        // stage-1 trajectory term
  GradcheckResult nll;        // stage-2 trajectory term
  GradcheckResult diffusion;  // epsilon-prediction term
  double loss_mse = 0.0, loss_nll = 0.0, loss_diffusion = 0.0;

  const GradcheckResult& worst() const;
};

/// Finite-difference check of each training-loss term through the whole
/// model (temporal encoder, diffusion latent, attention, fusion, decoder
/// rollout) on one seeded braking_interaction scene at freshly initialised
/// parameters. Terms are checked separately: a difference quotient cannot
/// resolve gradients much below ulp(L) / 2h, so summing a ~1e4 trajectory
/// loss with a ~1 diffusion loss would hide the latter's gradients in noise.
PipelineGradcheck pipeline_gradcheck(const TrainConfig& config, std::uint64_t seed, double h = 1e-5);

struct Checkpoint {
  static constexpr int kVersion = 1;
  TrainConfig config;
  ParamStore params;
  AdamState adam;
  std::size_t epoch = 0;  // epochs completed
  std::string rng_state;
  std::string hash;
  std::vector<EpochRecord> log;
  double best_val_rmse = -1.0;  // < 0 when no validation score yet
  std::size_t best_epoch = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainOptions {
  /// Latest state after every epoch; the best-validation state goes to
  /// `<checkpoint_path>.best`.
  std::optional<std::filesystem::path> checkpoint_path;
  std::optional<std::filesystem::path> log_path;
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this many completed epochs (for resumable, split runs).
  std::optional<std::size_t> stop_after_epoch;
  /// Validation samples per scene.
  std::size_t val_k = 1;
  bool verbose = false;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  ParamStore params;       // final
  ParamStore best_params;  // best validation 5 s RMSE
  std::size_t best_epoch = 0;
};

/// Two-stage training with Adam and global-norm clipping. Deterministic for
/// a given dataset, config and seed; resuming from a checkpoint continues the
/// exact same sequence.
TrainResult train(const DatasetSplit& data, const TrainConfig& config, const TrainOptions& options = {});

}  // namespace cdstraj
