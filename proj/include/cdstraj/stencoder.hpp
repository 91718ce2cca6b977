#pragma once

#include <vector>

#include "cdstraj/autodiff.hpp"
#include "cdstraj/data.hpp"
#include "cdstraj/model.hpp"

namespace cdstraj {

/// Temporal encodings of every agent in a scene.
struct HistoryEncoding {
  Var target;     // 1 x d
  Var neighbors;  // n_max x d, masked rows zero
};

struct EncodedScene {
  Var target_enc;    // h, 1 x d
  Var neighbor_enc;  // H-hat, n_max x d
  Var spatial;       // Upsilon, 1 x d
  Var fused;         // S, 1 x d
  Var context;       // [S ; h] projected to d, fed to the decoder
  Tensor attention;  // n_heads x 1 x n_max
};

/// Encodes a stack of histories (rows x 16 x 2, meters) into rows x d:
/// per-step leaky-ReLU embedding followed by a gated recurrent cell whose
/// hidden state starts at the learned vector temporal.h0.
Var temporal_encode_batch(Tape& tape, const ParamStore& params, const ModelConfig& config, const Tensor& histories);

/// Single 16 x 2 history -> 1 x d. Throws ContractError on a wrong length.
Var temporal_encode(Tape& tape, const ParamStore& params, const ModelConfig& config, const Tensor& history);

HistoryEncoding encode_histories(Tape& tape, const ParamStore& params, const ModelConfig& config, const Scene& scene);

/// H-hat rows: [temporal(history_i) ; latent_i] W + b, masked rows zeroed.
Var encode_neighbors(Tape& tape, const ParamStore& params, const ModelConfig& config, Var neighbor_temporal,
                     Var latent, const std::vector<bool>& mask);

struct AttentionResult {
  Var spatial;       // Upsilon, 1 x d
  Tensor attention;  // n_heads x 1 x n_max
};

/// Multi-head cross attention from the target encoding onto the neighbor
/// rows. Masked slots get exactly zero weight; with no neighbor present the
/// result is Upsilon = 0 and all-zero weights.
AttentionResult spatial_attention(Tape& tape, const ParamStore& params, const ModelConfig& config, Var target_enc,
                                  Var neighbor_enc, const std::vector<bool>& mask);

/// S = sigmoid(W_a U + b_a) * sigmoid(W_g H_a + b_g).
Var gated_fusion(Tape& tape, const ParamStore& params, Var spatial);

EncodedScene encode_scene(Tape& tape, const ParamStore& params, const ModelConfig& config, const Scene& scene,
                          const HistoryEncoding& histories, Var latent);
EncodedScene encode_scene(Tape& tape, const ParamStore& params, const ModelConfig& config, const Scene& scene,
                          Var latent);

/// Constant multipliers (1 for present neighbors, 0 for empty slots).
std::vector<double> mask_factors(const std::vector<bool>& mask);

}  // namespace cdstraj
