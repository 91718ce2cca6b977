#include "cdstraj/decoder.hpp"

#include <cmath>

#include <json.hpp>

#include "cdstraj/diffusion.hpp"
#include "cdstraj/errors.hpp"

namespace cdstraj {

namespace {

constexpr double kRhoLimit = 0.999;

GaussianParams2D apply_links(const Tensor& raw, std::size_t row, double position_scale) {
  GaussianParams2D g;
  g.mu_x = raw.at(row, 0) * position_scale;
  g.mu_y = raw.at(row, 1) * position_scale;
  g.sigma_x = std::exp(raw.at(row, 2));
  g.sigma_y = std::exp(raw.at(row, 3));
  g.rho = kRhoLimit * std::tanh(raw.at(row, 4));
  return g;
}

/// Links applied to a 25 x 5 block of raw head outputs.
TrajectoryVars links(Tape& tape, const ModelConfig& config, Var raw) {
  // lower-triangular ones: row t sums displacements 1..t
  Tensor cum({kFutureSteps, kFutureSteps});
  for (std::size_t i = 0; i < kFutureSteps; ++i)
    for (std::size_t j = 0; j <= i; ++j) cum.at(i, j) = config.position_scale;
  TrajectoryVars v;
  v.mu = matmul(tape.constant(std::move(cum)), slice_cols(raw, 0, 2));
  v.sigma = exp(slice_cols(raw, 2, 2));
  v.rho = scale(tanh(slice_cols(raw, 4, 1)), kRhoLimit);
  return v;
}

}  // namespace

LstmState initial_decoder_state(Tape& tape, const ModelConfig& config) {
  return {tape.constant(Tensor::zeros({1, config.d})), tape.constant(Tensor::zeros({1, config.d}))};
}

DecodeStep decode_step(Tape& tape, const ParamStore& params, const ModelConfig& config, Var context, Var prev_out,
                       const LstmState& state) {
  const std::size_t d = config.d;
  if (context.value().numel() != d || prev_out.value().numel() != 2) {
    throw DimensionError("decode_step: context " + shape_str(context.shape()) + ", prev " + shape_str(prev_out.shape()));
  }
  Var gates = add_bias(add(add(matmul(context, tape.parameter(params, "decoder.W_ctx")),
                               matmul(prev_out, tape.parameter(params, "decoder.W_prev"))),
                           matmul(state.h, tape.parameter(params, "decoder.W_h"))),
                       tape.parameter(params, "decoder.b"));
  Var i = sigmoid(slice_cols(gates, 0, d));
  Var f = sigmoid(slice_cols(gates, d, d));
  Var g = tanh(slice_cols(gates, 2 * d, d));
  Var o = sigmoid(slice_cols(gates, 3 * d, d));
  DecodeStep out;
  out.state.c = add(mul(f, state.c), mul(i, g));
  out.state.h = mul(o, tanh(out.state.c));
  out.raw = linear(out.state.h, tape.parameter(params, "decoder.W_out"), tape.parameter(params, "decoder.b_out"));
  out.displacement = scale(slice_cols(out.raw, 0, 2), config.position_scale);
  out.params = apply_links(out.raw.value(), 0, config.position_scale);
  return out;
}

TrajectoryVars decode_rollout(Tape& tape, const ParamStore& params, const ModelConfig& config,
                              const EncodedScene& encoded) {
  if (config.ablation == Ablation::Decoder) {
    Var flat = linear(encoded.context, tape.parameter(params, "decoder_flat.W"), tape.parameter(params, "decoder_flat.b"));
    return links(tape, config, reshape(flat, {kFutureSteps, 5}));
  }
  LstmState state = initial_decoder_state(tape, config);
  Var prev = tape.constant(Tensor::zeros({1, 2}));
  std::vector<Var> rows;
  rows.reserve(kFutureSteps);
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    DecodeStep step = decode_step(tape, params, config, encoded.context, prev, state);
    rows.push_back(step.raw);
    prev = slice_cols(step.raw, 0, 2);
    state = step.state;
  }
  return links(tape, config, concat_rows(rows));
}

PredictedTrajectory to_prediction(const TrajectoryVars& vars, std::string scene_id, std::size_t sample_index) {
  PredictedTrajectory p;
  p.scene_id = std::move(scene_id);
  p.sample_index = sample_index;
  const Tensor& mu = vars.mu.value();
  const Tensor& sg = vars.sigma.value();
  const Tensor& rho = vars.rho.value();
  p.steps.resize(mu.rows());
  for (std::size_t t = 0; t < mu.rows(); ++t) {
    p.steps[t] = {mu.at(t, 0), mu.at(t, 1), sg.at(t, 0), sg.at(t, 1), rho[t]};
  }
  return p;
}

std::vector<PredictedTrajectory> predict(const Scene& scene, const ParamStore& params, const ModelConfig& config,
                                         std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ContractError("predict needs K >= 1");
  Tape tape(false);
  const HistoryEncoding hist = encode_histories(tape, params, config, scene);
  const SamplingContext ctx{hist.target.value(), hist.neighbors.value(), scene.neighbor_mask};
  const auto latents = reverse_sample(ctx, k, make_schedule(config), params, config, seed);
  std::vector<PredictedTrajectory> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    EncodedScene enc = encode_scene(tape, params, config, scene, hist, tape.constant(latents[i]));
    out.push_back(to_prediction(decode_rollout(tape, params, config, enc), scene.scene_id, i));
  }
  return out;
}

std::string prediction_to_json_line(const PredictedTrajectory& p) {
  nlohmann::json j;
  j["sceneId"] = p.scene_id;
  j["sampleIndex"] = p.sample_index;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : p.steps) rows.push_back({s.mu_x, s.mu_y, s.sigma_x, s.sigma_y, s.rho});
  j["steps"] = std::move(rows);
  return j.dump();
}

PredictedTrajectory prediction_from_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    PredictedTrajectory p;
    p.scene_id = j.at("sceneId").get<std::string>();
    p.sample_index = j.at("sampleIndex").get<std::size_t>();
    for (const auto& r : j.at("steps")) {
      if (r.size() != 5) throw DataError("prediction rows must have 5 values");
      p.steps.push_back({r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>(),
                         r[4].get<double>()});
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed prediction record: ") + e.what());
  }
}

}  // namespace cdstraj
