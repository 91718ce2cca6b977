#include "cdstraj/stencoder.hpp"

#include <cmath>

#include "cdstraj/errors.hpp"

namespace cdstraj {

std::vector<double> mask_factors(const std::vector<bool>& mask) {
  std::vector<double> f(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) f[i] = mask[i] ? 1.0 : 0.0;
  return f;
}

Var temporal_encode_batch(Tape& tape, const ParamStore& params, const ModelConfig& config, const Tensor& histories) {
  if (histories.rank() != 3 || histories.dim(1) != kHistorySteps || histories.dim(2) != 2) {
    throw ContractError("temporal encoder expects rows x 16 x 2 histories, got " + shape_str(histories.shape()));
  }
  const std::size_t rows = histories.dim(0);
  const std::size_t d = config.d;
  const double inv_scale = 1.0 / config.position_scale;

  Var w_emb = tape.parameter(params, "temporal.W_emb");
  std::vector<Var> steps;
  steps.reserve(kHistorySteps);
  for (std::size_t t = 0; t < kHistorySteps; ++t) {
    Tensor x({rows, 2});
    for (std::size_t r = 0; r < rows; ++r) {
      x.at(r, 0) = histories.at(r, t, 0) * inv_scale;
      x.at(r, 1) = histories.at(r, t, 1) * inv_scale;
    }
    steps.push_back(leaky_relu(matmul(tape.constant(std::move(x)), w_emb), config.leaky_slope));
  }

  if (config.ablation == Ablation::Temporal) {
    // stub: mean-pooled step embeddings instead of the recurrent update
    Var acc = steps.front();
    for (std::size_t t = 1; t < steps.size(); ++t) acc = add(acc, steps[t]);
    return scale(acc, 1.0 / static_cast<double>(kHistorySteps));
  }

  Var w_x = tape.parameter(params, "temporal.W_x");
  Var w_h = tape.parameter(params, "temporal.W_h");
  Var b = tape.parameter(params, "temporal.b");
  Var h = broadcast_rows(tape.parameter(params, "temporal.h0"), rows);
  for (const Var& f : steps) {
    Var xg = linear(f, w_x, b);   // rows x 3d
    Var hg = matmul(h, w_h);      // rows x 3d
    Var z = sigmoid(add(slice_cols(xg, 0, d), slice_cols(hg, 0, d)));
    Var r = sigmoid(add(slice_cols(xg, d, d), slice_cols(hg, d, d)));
    Var n = tanh(add(slice_cols(xg, 2 * d, d), mul(r, slice_cols(hg, 2 * d, d))));
    h = add(mul(one_minus(z), n), mul(z, h));
  }
  return h;
}

Var temporal_encode(Tape& tape, const ParamStore& params, const ModelConfig& config, const Tensor& history) {
  if (history.numel() != kHistorySteps * 2 || history.cols() != 2) {
    throw ContractError("temporal_encode expects exactly 16 history steps, got shape " + shape_str(history.shape()));
  }
  return temporal_encode_batch(tape, params, config, history.reshaped({1, kHistorySteps, 2}));
}

HistoryEncoding encode_histories(Tape& tape, const ParamStore& params, const ModelConfig& config, const Scene& scene) {
  const std::size_t n = scene.n_max();
  if (n != config.n_max) {
    throw DimensionError("scene has " + std::to_string(n) + " neighbor slots, model expects " +
                         std::to_string(config.n_max));
  }
  std::vector<double> stacked(scene.target_history.data().begin(), scene.target_history.data().end());
  const auto nh = scene.neighbor_histories.data();
  stacked.insert(stacked.end(), nh.begin(), nh.end());
  Var all = temporal_encode_batch(tape, params, config, Tensor({n + 1, kHistorySteps, 2}, std::move(stacked)));
  HistoryEncoding out;
  out.target = slice_rows(all, 0, 1);
  out.neighbors = scale_rows(slice_rows(all, 1, n), mask_factors(scene.neighbor_mask));
  return out;
}

Var encode_neighbors(Tape& tape, const ParamStore& params, const ModelConfig& config, Var neighbor_temporal,
                     Var latent, const std::vector<bool>& mask) {
  if (latent.rows() != neighbor_temporal.rows() || latent.cols() != config.d_c) {
    throw DimensionError("encode_neighbors: latent " + shape_str(latent.shape()) + " vs neighbor encoding " +
                         shape_str(neighbor_temporal.shape()));
  }
  Var joined = concat_cols({neighbor_temporal, latent});
  Var h = linear(joined, tape.parameter(params, "neighbor.W"), tape.parameter(params, "neighbor.b"));
  return scale_rows(h, mask_factors(mask));
}

AttentionResult spatial_attention(Tape& tape, const ParamStore& params, const ModelConfig& config, Var target_enc,
                                  Var neighbor_enc, const std::vector<bool>& mask) {
  const std::size_t n = neighbor_enc.rows();
  const std::size_t heads = config.n_heads, dh = config.d_head();
  AttentionResult out;
  out.attention = Tensor::zeros({heads, 1, n});

  bool any = false;
  for (bool m : mask) any = any || m;
  if (config.ablation == Ablation::Spatial || !any) {
    out.spatial = tape.constant(Tensor::zeros({1, config.d}));
    return out;
  }

  Var q = matmul(target_enc, tape.parameter(params, "attention.W_q"));
  Var k = matmul(neighbor_enc, tape.parameter(params, "attention.W_k"));
  Var v = matmul(neighbor_enc, tape.parameter(params, "attention.W_v"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Var qh = slice_cols(q, hd * dh, dh);
    Var kh = slice_cols(k, hd * dh, dh);
    Var vh = slice_cols(v, hd * dh, dh);
    Var logits = scale(matmul(qh, transpose(kh)), inv_sqrt);  // 1 x n
    Var w = masked_softmax_rows(logits, mask);
    for (std::size_t j = 0; j < n; ++j) out.attention.at(hd, 0, j) = w.value()[j];
    head_out.push_back(matmul(w, vh));
  }
  out.spatial = matmul(concat_cols(head_out), tape.parameter(params, "attention.W_o"));
  return out;
}

Var gated_fusion(Tape& tape, const ParamStore& params, Var spatial) {
  Var ha = sigmoid(linear(spatial, tape.parameter(params, "fusion.W_a"), tape.parameter(params, "fusion.b_a")));
  Var hg = sigmoid(linear(ha, tape.parameter(params, "fusion.W_g"), tape.parameter(params, "fusion.b_g")));
  return mul(ha, hg);
}

EncodedScene encode_scene(Tape& tape, const ParamStore& params, const ModelConfig& config, const Scene& scene,
                          const HistoryEncoding& histories, Var latent) {
  EncodedScene e;
  e.target_enc = histories.target;
  e.neighbor_enc = encode_neighbors(tape, params, config, histories.neighbors, latent, scene.neighbor_mask);
  auto att = spatial_attention(tape, params, config, e.target_enc, e.neighbor_enc, scene.neighbor_mask);
  e.spatial = att.spatial;
  e.attention = std::move(att.attention);
  e.fused = config.ablation == Ablation::Fusion ? e.spatial : gated_fusion(tape, params, e.spatial);
  e.context = linear(concat_cols({e.fused, e.target_enc}), tape.parameter(params, "context.W"),
                     tape.parameter(params, "context.b"));
  return e;
}

EncodedScene encode_scene(Tape& tape, const ParamStore& params, const ModelConfig& config, const Scene& scene,
                          Var latent) {
  return encode_scene(tape, params, config, scene, encode_histories(tape, params, config, scene), latent);
}

}  // namespace cdstraj
