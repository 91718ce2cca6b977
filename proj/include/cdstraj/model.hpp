#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "cdstraj/tensor.hpp"

namespace cdstraj {

/// Component replaced by a neutral stub, mirroring ablation models A-E.
enum class Ablation { None, Diffusion, Temporal, Spatial, Fusion, Decoder };

Ablation parse_ablation(std::string_view s);
std::string_view to_string(Ablation a);

/// Model dimensions and diffusion hyper-parameters.
struct ModelConfig {
  std::size_t d = 64;       // hidden width of every encoder stage
  std::size_t n_heads = 4;  // d / n_heads = per-head width
  std::size_t d_c = 32;     // neighbor-future latent width
  std::size_t n_max = 8;
  std::size_t gamma = 50;
  double beta_min = 1e-4;
  double beta_max = 0.05;
  std::size_t k_samples = 5;
  double leaky_slope = 0.1;
  /// Positions are divided by this (meters) before entering the network and
  /// decoded displacements are multiplied by it.
  double position_scale = 10.0;
  Ablation ablation = Ablation::None;

  std::size_t d_head() const { return d / n_heads; }
  std::size_t noise_hidden() const { return 2 * d_c; }
  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;

  /// Small configuration used by the desk-scale tests and the CLI default.
  static ModelConfig tiny();
};

/// Registers and initialises every learnable tensor of the model
/// (Xavier-uniform weights, zero biases, LSTM forget bias 1).
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

}  // namespace cdstraj
