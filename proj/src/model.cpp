#include "cdstraj/model.hpp"

#include <cmath>

#include "cdstraj/data.hpp"
#include "cdstraj/errors.hpp"
#include "cdstraj/rng.hpp"

namespace cdstraj {

Ablation parse_ablation(std::string_view s) {
  if (s == "none") return Ablation::None;
  if (s == "diffusion") return Ablation::Diffusion;
  if (s == "temporal") return Ablation::Temporal;
  if (s == "spatial") return Ablation::Spatial;
  if (s == "fusion") return Ablation::Fusion;
  if (s == "decoder") return Ablation::Decoder;
  throw ConfigError("unknown ablation '" + std::string(s) +
                    "' (expected none|diffusion|temporal|spatial|fusion|decoder)");
}

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::None:
      return "none";
    case Ablation::Diffusion:
      return "diffusion";
    case Ablation::Temporal:
      return "temporal";
    case Ablation::Spatial:
      return "spatial";
    case Ablation::Fusion:
      return "fusion";
    case Ablation::Decoder:
      return "decoder";
  }
  return "none";
}

void ModelConfig::validate() const {
  if (d == 0 || n_heads == 0 || d % n_heads != 0) throw ConfigError("d must be a positive multiple of n_heads");
  if (d_c == 0) throw ConfigError("d_c must be positive");
  if (n_max == 0) throw ConfigError("n_max must be positive");
  if (gamma == 0) throw ConfigError("gamma must be at least 1");
  if (!(beta_min > 0.0) || beta_min > beta_max || !(beta_max < 1.0)) {
    throw ConfigError("need 0 < beta_min <= beta_max < 1");
  }
  if (k_samples == 0) throw ConfigError("K must be at least 1");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in (0, 1)");
  if (!(position_scale > 0.0)) throw ConfigError("position_scale must be positive");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.d = 16;
  c.n_heads = 2;
  c.d_c = 8;
  c.n_max = 2;
  c.gamma = 10;
  c.k_samples = 5;
  return c;
}

ParamStore init_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  ParamStore p;
  auto weight = [&](const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor t({in, out});
    for (auto& v : t.storage()) v = rng.uniform(-bound, bound);
    p.add(name, std::move(t));
  };
  auto vec = [&](const std::string& name, std::size_t n, double fill = 0.0) { p.add(name, Tensor({n}, fill)); };
  const std::size_t d = c.d, dc = c.d_c, hn = c.noise_hidden();

  // temporal encoder: embedding + gated recurrent cell (gates z|r|n stacked)
  weight("temporal.W_emb", 2, d);
  weight("temporal.W_x", d, 3 * d);
  weight("temporal.W_h", d, 3 * d);
  vec("temporal.b", 3 * d);
  {
    Tensor h0({d});
    for (auto& v : h0.storage()) v = rng.uniform(-0.1, 0.1);
    p.add("temporal.h0", std::move(h0));
  }
  // neighbor feature: [temporal ; future latent] -> d
  weight("neighbor.W", d + dc, d);
  vec("neighbor.b", d);
  // spatial attention (per-head blocks stacked column-wise)
  weight("attention.W_q", d, d);
  weight("attention.W_k", d, d);
  weight("attention.W_v", d, d);
  weight("attention.W_o", d, d);
  // gated fusion
  weight("fusion.W_a", d, d);
  vec("fusion.b_a", d);
  weight("fusion.W_g", d, d);
  vec("fusion.b_g", d);
  // decoder context [S ; h] -> d
  weight("context.W", 2 * d, d);
  vec("context.b", d);
  // LSTM decoder (gates i|f|g|o stacked); input is [context ; prev displacement]
  weight("decoder.W_ctx", d, 4 * d);
  weight("decoder.W_prev", 2, 4 * d);
  weight("decoder.W_h", d, 4 * d);
  {
    Tensor b({4 * d});
    for (std::size_t j = d; j < 2 * d; ++j) b[j] = 1.0;
    p.add("decoder.b", std::move(b));
  }
  weight("decoder.W_out", d, 5, 0.1);
  vec("decoder.b_out", 5);
  // single-shot head used when the recurrent decoder is ablated
  weight("decoder_flat.W", d, kFutureSteps * 5, 0.1);
  vec("decoder_flat.b", kFutureSteps * 5);
  // neighbor-future latent
  weight("future.W", kFutureSteps * 2, dc, 0.5);
  vec("future.b", dc);
  // noise predictor
  weight("noise.W_c", dc, hn);
  weight("noise.W_n", d, hn);
  weight("noise.W_t", d, hn);
  weight("noise.W_e", dc, hn);
  vec("noise.b1", hn);
  weight("noise.W2", hn, hn);
  vec("noise.b2", hn);
  weight("noise.W3", hn, dc);
  vec("noise.b3", dc);
  return p;
}

}  // namespace cdstraj
