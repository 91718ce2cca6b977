#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cdstraj/autodiff.hpp"
#include "cdstraj/data.hpp"
#include "cdstraj/model.hpp"
#include "cdstraj/stencoder.hpp"

namespace cdstraj {

/// Per-step variance parameters. Level 0 is the clean latent and level gamma
/// the most diffused one; the accessors take the 1-based step delta.
struct NoiseSchedule {
  std::size_t gamma = 0;
  std::vector<double> beta;       // beta[delta - 1]
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha

  double beta_at(std::size_t delta) const { return beta.at(delta - 1); }
  double alpha_at(std::size_t delta) const { return alpha.at(delta - 1); }
  double alpha_bar_at(std::size_t delta) const { return alpha_bar.at(delta - 1); }
};

/// Linear beta ramp from beta_min to beta_max over gamma steps.
NoiseSchedule make_schedule(std::size_t gamma, double beta_min, double beta_max);
NoiseSchedule make_schedule(const ModelConfig& config);

/// C^delta = sqrt(alpha_delta) C^(delta-1) + sqrt(1 - alpha_delta) noise.
Tensor forward_step(const Tensor& c_prev, std::size_t delta, const NoiseSchedule& sched, const Tensor& noise);

/// C^delta = sqrt(alpha_bar_delta) C^0 + sqrt(1 - alpha_bar_delta) noise.
Tensor forward_closed_form(const Tensor& c0, std::size_t delta, const NoiseSchedule& sched, const Tensor& noise);
Var forward_closed_form(Var c0, std::size_t delta, const NoiseSchedule& sched, const Tensor& noise);

/// One denoising update producing level delta from level delta + 1, using the
/// coefficients of step delta + 1:
///   C^delta = (C^(delta+1) - (1 - a) / sqrt(1 - a_bar) eps) / sqrt(a) + sqrt((1 - a) / a) z.
/// delta must lie in [0, gamma - 1].
Tensor reverse_step(const Tensor& c_next, const Tensor& eps_hat, std::size_t delta, const NoiseSchedule& sched,
                    const Tensor& z);

/// Sinusoidal embedding of a diffusion level, 1 x width.
Tensor step_embedding(std::size_t level, std::size_t width);

/// Noise predictor. `latent` is the n_max x d_c feature at diffusion level
/// `level` (1..gamma); conditioning is the target encoding (1 x d) and the
/// neighbor history encodings (n_max x d). A per-row MLP with a linear output
/// head; masked rows come out zero.
Var predict_noise(Tape& tape, const ParamStore& params, const ModelConfig& config, Var latent, Var target_enc,
                  Var neighbor_enc, std::size_t level, const std::vector<bool>& mask);

/// Clean latent C^0 from ground-truth neighbor futures: a per-neighbor linear
/// map of the flattened 25 x 2 future, masked rows zero.
Var future_feature_encode(Tape& tape, const ParamStore& params, const ModelConfig& config,
                          const Tensor& neighbor_futures, const std::vector<bool>& mask);

/// Conditioning values for sampling (no adjoints needed).
struct SamplingContext {
  Tensor target_enc;    // 1 x d
  Tensor neighbor_enc;  // n_max x d
  std::vector<bool> mask;
};

/// K independent reverse chains, each started from N(0, I) and denoised from
/// level gamma down to 0 with z forced to zero on the last update. Masked rows
/// are zeroed after every update. Deterministic in `seed`.
std::vector<Tensor> reverse_sample(const SamplingContext& ctx, std::size_t k, const NoiseSchedule& sched,
                                   const ParamStore& params, const ModelConfig& config, std::uint64_t seed);

/// Epsilon-prediction objective: draws delta ~ U{1..gamma} and eps ~ N(0, I)
/// from `seed`, diffuses the clean latent in closed form, and returns the
/// mean squared error between eps and the predictor output over the present
/// neighbor rows (0 when the scene has no neighbor).
Var diffusion_loss(Tape& tape, const ParamStore& params, const ModelConfig& config, const NoiseSchedule& sched,
                   const Scene& scene, const HistoryEncoding& histories, std::uint64_t seed);

/// Variant with an explicit clean latent and draws, used by tests.
Var diffusion_loss(Tape& tape, const ParamStore& params, const ModelConfig& config, const NoiseSchedule& sched,
                   Var clean_latent, const HistoryEncoding& histories, const std::vector<bool>& mask,
                   std::size_t delta, const Tensor& eps);

}  // namespace cdstraj
