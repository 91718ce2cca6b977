#include "cdstraj/diffusion.hpp"

#include <cmath>

#include "cdstraj/errors.hpp"
#include "cdstraj/rng.hpp"

namespace cdstraj {

NoiseSchedule make_schedule(std::size_t gamma, double beta_min, double beta_max) {
  if (gamma == 0) throw ConfigError("diffusion needs gamma >= 1");
  if (!(beta_min > 0.0) || beta_min > beta_max || !(beta_max < 1.0)) {
    throw ConfigError("need 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.gamma = gamma;
  double running = 1.0;
  for (std::size_t i = 0; i < gamma; ++i) {
    const double frac = gamma == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(gamma - 1);
    const double b = beta_min + (beta_max - beta_min) * frac;
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    running *= 1.0 - b;
    s.alpha_bar.push_back(running);
  }
  return s;
}

NoiseSchedule make_schedule(const ModelConfig& config) {
  return make_schedule(config.gamma, config.beta_min, config.beta_max);
}

namespace {

void check_delta(std::size_t delta, const NoiseSchedule& sched) {
  if (delta < 1 || delta > sched.gamma) {
    throw ContractError("diffusion step " + std::to_string(delta) + " outside [1, " + std::to_string(sched.gamma) + "]");
  }
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor forward_step(const Tensor& c_prev, std::size_t delta, const NoiseSchedule& sched, const Tensor& noise) {
  check_delta(delta, sched);
  check_same(c_prev, noise, "forward_step noise shape");
  const double a = sched.alpha_at(delta);
  const double keep = std::sqrt(a), add_n = std::sqrt(1.0 - a);
  Tensor out = c_prev;
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] = keep * c_prev[k] + add_n * noise[k];
  return out;
}

Tensor forward_closed_form(const Tensor& c0, std::size_t delta, const NoiseSchedule& sched, const Tensor& noise) {
  check_delta(delta, sched);
  check_same(c0, noise, "forward_closed_form noise shape");
  const double ab = sched.alpha_bar_at(delta);
  const double keep = std::sqrt(ab), add_n = std::sqrt(1.0 - ab);
  Tensor out = c0;
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] = keep * c0[k] + add_n * noise[k];
  return out;
}

Var forward_closed_form(Var c0, std::size_t delta, const NoiseSchedule& sched, const Tensor& noise) {
  check_delta(delta, sched);
  check_same(c0.value(), noise, "forward_closed_form noise shape");
  const double ab = sched.alpha_bar_at(delta);
  Tensor scaled_noise = noise;
  for (auto& v : scaled_noise.storage()) v *= std::sqrt(1.0 - ab);
  return add(scale(c0, std::sqrt(ab)), c0.tape->constant(std::move(scaled_noise)));
}

Tensor reverse_step(const Tensor& c_next, const Tensor& eps_hat, std::size_t delta, const NoiseSchedule& sched,
                    const Tensor& z) {
  if (delta >= sched.gamma) {
    throw ContractError("reverse step " + std::to_string(delta) + " outside [0, " + std::to_string(sched.gamma - 1) + "]");
  }
  check_same(c_next, eps_hat, "reverse_step eps shape");
  check_same(c_next, z, "reverse_step z shape");
  const double a = sched.alpha_at(delta + 1);
  const double ab = sched.alpha_bar_at(delta + 1);
  const double inv_sqrt_a = 1.0 / std::sqrt(a);
  const double eps_coef = (1.0 - a) / std::sqrt(1.0 - ab);
  const double z_coef = std::sqrt((1.0 - a) / a);
  Tensor out = c_next;
  for (std::size_t k = 0; k < out.numel(); ++k) {
    out[k] = inv_sqrt_a * (c_next[k] - eps_coef * eps_hat[k]) + z_coef * z[k];
  }
  return out;
}

Tensor step_embedding(std::size_t level, std::size_t width) {
  Tensor e({1, width});
  const double pos = static_cast<double>(level);
  for (std::size_t i = 0; i < width; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
    e[i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
  }
  return e;
}

Var predict_noise(Tape& tape, const ParamStore& params, const ModelConfig& config, Var latent, Var target_enc,
                  Var neighbor_enc, std::size_t level, const std::vector<bool>& mask) {
  const std::size_t n = config.n_max;
  if (latent.shape() != Shape{n, config.d_c}) {
    throw DimensionError("predict_noise: latent " + shape_str(latent.shape()) + " vs expected " +
                         shape_str({n, config.d_c}));
  }
  if (target_enc.value().numel() != config.d) {
    throw DimensionError("predict_noise: target encoding " + shape_str(target_enc.shape()) + " vs width " +
                         std::to_string(config.d));
  }
  if (neighbor_enc.shape() != Shape{n, config.d}) {
    throw DimensionError("predict_noise: neighbor encoding " + shape_str(neighbor_enc.shape()) + " vs expected " +
                         shape_str({n, config.d}));
  }
  if (mask.size() != n) throw DimensionError("predict_noise: mask length mismatch");

  // shared per-scene term: target encoding + step embedding + bias
  Var shared = add_bias(add(matmul(target_enc, tape.parameter(params, "noise.W_t")),
                            matmul(tape.constant(step_embedding(level, config.d_c)), tape.parameter(params, "noise.W_e"))),
                        tape.parameter(params, "noise.b1"));
  Var pre = add(matmul(latent, tape.parameter(params, "noise.W_c")),
                matmul(neighbor_enc, tape.parameter(params, "noise.W_n")));
  Var h1 = leaky_relu(add(pre, broadcast_rows(shared, n)), config.leaky_slope);
  Var h2 = leaky_relu(linear(h1, tape.parameter(params, "noise.W2"), tape.parameter(params, "noise.b2")),
                      config.leaky_slope);
  Var out = linear(h2, tape.parameter(params, "noise.W3"), tape.parameter(params, "noise.b3"));
  return scale_rows(out, mask_factors(mask));
}

Var future_feature_encode(Tape& tape, const ParamStore& params, const ModelConfig& config,
                          const Tensor& neighbor_futures, const std::vector<bool>& mask) {
  const std::size_t n = mask.size();
  if (neighbor_futures.numel() != n * kFutureSteps * 2) {
    throw DimensionError("future_feature_encode: futures " + shape_str(neighbor_futures.shape()) + " for " +
                         std::to_string(n) + " slots");
  }
  Tensor flat = neighbor_futures.reshaped({n, kFutureSteps * 2});
  for (auto& v : flat.storage()) v /= config.position_scale;
  Var c = linear(tape.constant(std::move(flat)), tape.parameter(params, "future.W"), tape.parameter(params, "future.b"));
  return scale_rows(c, mask_factors(mask));
}

std::vector<Tensor> reverse_sample(const SamplingContext& ctx, std::size_t k, const NoiseSchedule& sched,
                                   const ParamStore& params, const ModelConfig& config, std::uint64_t seed) {
  if (k == 0) throw ContractError("reverse_sample needs K >= 1");
  const std::size_t n = config.n_max, dc = config.d_c;
  const auto factors = mask_factors(ctx.mask);
  std::vector<Tensor> out;
  out.reserve(k);
  for (std::size_t chain = 0; chain < k; ++chain) {
    if (config.ablation == Ablation::Diffusion) {
      out.push_back(Tensor::zeros({n, dc}));
      continue;
    }
    Rng rng(derive_seed(seed, chain));
    auto draw = [&]() {
      Tensor t({n, dc});
      for (auto& v : t.storage()) v = rng.normal();
      return t;
    };
    auto apply_mask = [&](Tensor& t) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < dc; ++c) t.at(r, c) *= factors[r];
    };
    Tensor c = draw();
    apply_mask(c);
    for (std::size_t delta = sched.gamma; delta-- > 0;) {
      Tape tape(false);
      Var eps = predict_noise(tape, params, config, tape.constant(c), tape.constant(ctx.target_enc),
                              tape.constant(ctx.neighbor_enc), delta + 1, ctx.mask);
      Tensor z = delta > 0 ? draw() : Tensor::zeros({n, dc});
      c = reverse_step(c, eps.value(), delta, sched, z);
      apply_mask(c);
    }
    out.push_back(std::move(c));
  }
  return out;
}

Var diffusion_loss(Tape& tape, const ParamStore& params, const ModelConfig& config, const NoiseSchedule& sched,
                   Var clean_latent, const HistoryEncoding& histories, const std::vector<bool>& mask,
                   std::size_t delta, const Tensor& eps) {
  std::size_t present = 0;
  for (bool m : mask) present += m ? 1 : 0;
  if (present == 0) return tape.constant(Tensor::scalar(0.0));
  Tensor masked_eps = eps;
  const auto factors = mask_factors(mask);
  for (std::size_t r = 0; r < masked_eps.rows(); ++r)
    for (std::size_t c = 0; c < masked_eps.cols(); ++c) masked_eps.at(r, c) *= factors[r];
  Var noisy = forward_closed_form(clean_latent, delta, sched, masked_eps);
  Var pred = predict_noise(tape, params, config, noisy, histories.target, histories.neighbors, delta, mask);
  Var err = sub(pred, tape.constant(std::move(masked_eps)));
  return scale(sum(square(err)), 1.0 / static_cast<double>(present * config.d_c));
}

Var diffusion_loss(Tape& tape, const ParamStore& params, const ModelConfig& config, const NoiseSchedule& sched,
                   const Scene& scene, const HistoryEncoding& histories, std::uint64_t seed) {
  Rng rng(seed);
  const auto delta = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(sched.gamma)));
  Tensor eps({config.n_max, config.d_c});
  for (auto& v : eps.storage()) v = rng.normal();
  Var c0 = future_feature_encode(tape, params, config, scene.neighbor_futures, scene.neighbor_mask);
  return diffusion_loss(tape, params, config, sched, c0, histories, scene.neighbor_mask, delta, eps);
}

}  // namespace cdstraj
