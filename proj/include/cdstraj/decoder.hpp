#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cdstraj/autodiff.hpp"
#include "cdstraj/data.hpp"
#include "cdstraj/model.hpp"
#include "cdstraj/stencoder.hpp"

namespace cdstraj {

/// Bivariate Gaussian over one future position.
struct GaussianParams2D {
  double mu_x = 0.0;
  double mu_y = 0.0;
  double sigma_x = 1.0;  // > 0 (exp link)
  double sigma_y = 1.0;
  double rho = 0.0;      // 0.999 * tanh link
};

struct PredictedTrajectory {
  std::string scene_id;
  std::size_t sample_index = 0;
  std::vector<GaussianParams2D> steps;  // 25, scene coordinates
};

/// Taped form of a rollout, consumed by the losses.
struct TrajectoryVars {
  Var mu;     // 25 x 2, absolute (cumulative displacement) meters
  Var sigma;  // 25 x 2
  Var rho;    // 25 x 1
};

struct LstmState {
  Var h;  // 1 x d
  Var c;  // 1 x d
};

struct DecodeStep {
  Var raw;           // 1 x 5 head output before links
  Var displacement;  // 1 x 2, meters
  GaussianParams2D params;  // links applied; mu holds the step displacement
  LstmState state;
};

LstmState initial_decoder_state(Tape& tape, const ModelConfig& config);

/// One LSTM step on [context ; prev_out]. `prev_out` is the previous mean
/// displacement in network units (meters / position_scale), zero at t = 1.
DecodeStep decode_step(Tape& tape, const ParamStore& params, const ModelConfig& config, Var context, Var prev_out,
                       const LstmState& state);

/// 25 chained steps; absolute means are the running sum of displacements
/// from the origin.
TrajectoryVars decode_rollout(Tape& tape, const ParamStore& params, const ModelConfig& config,
                              const EncodedScene& encoded);

PredictedTrajectory to_prediction(const TrajectoryVars& vars, std::string scene_id = {}, std::size_t sample_index = 0);

/// End-to-end inference for one scene: temporal encodings once, K diffusion
/// latents, then encoding and rollout per latent. Deterministic in `seed`.
std::vector<PredictedTrajectory> predict(const Scene& scene, const ParamStore& params, const ModelConfig& config,
                                         std::size_t k, std::uint64_t seed);

/// Newline-delimited JSON: {"sceneId", "sampleIndex", "steps": 25 rows of
/// [mu_x, mu_y, sigma_x, sigma_y, rho]}.
std::string prediction_to_json_line(const PredictedTrajectory& p);
PredictedTrajectory prediction_from_json_line(const std::string& line);

}  // namespace cdstraj
