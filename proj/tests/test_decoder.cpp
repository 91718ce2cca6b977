#include <doctest.h>

#include <cmath>

#include "cdstraj/decoder.hpp"
#include "cdstraj/errors.hpp"
#include "cdstraj/gradcheck.hpp"
#include "cdstraj/rng.hpp"

using namespace cdstraj;

namespace {

ModelConfig small_config() {
  ModelConfig c = ModelConfig::tiny();
  c.d = 8;
  c.n_heads = 2;
  c.d_c = 4;
  c.n_max = 3;
  c.gamma = 4;
  return c;
}

EncodedScene fake_encoding(Tape& tape, const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Tensor ctx({1, cfg.d});
  for (auto& v : ctx.storage()) v = rng.normal();
  EncodedScene e;
  e.context = tape.constant(ctx);
  return e;
}

}  // namespace

TEST_CASE("zero decoder weights give a standard Gaussian at the origin") {
  const ModelConfig cfg = small_config();
  ParamStore params = init_params(cfg, 0);
  for (const auto& name : params.names()) params.value(name).fill(0.0);
  Tape tape(false);
  const PredictedTrajectory p = to_prediction(decode_rollout(tape, params, cfg, fake_encoding(tape, cfg, 1)));
  REQUIRE(p.steps.size() == kFutureSteps);
  for (const auto& s : p.steps) {
    CHECK(s.mu_x == 0.0);
    CHECK(s.mu_y == 0.0);
    CHECK(s.sigma_x == 1.0);
    CHECK(s.sigma_y == 1.0);
    CHECK(s.rho == 0.0);
  }
}

TEST_CASE("rollout means are running sums of step displacements") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 2);
  Tape tape(false);
  const EncodedScene enc = fake_encoding(tape, cfg, 3);
  const TrajectoryVars roll = decode_rollout(tape, params, cfg, enc);

  LstmState state = initial_decoder_state(tape, cfg);
  Var prev = tape.constant(Tensor({1, 2}));
  double x = 0.0, y = 0.0;
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    const DecodeStep step = decode_step(tape, params, cfg, enc.context, prev, state);
    x += step.displacement.value()[0];
    y += step.displacement.value()[1];
    CHECK(std::abs(roll.mu.value().at(t, 0) - x) < 1e-9);
    CHECK(std::abs(roll.mu.value().at(t, 1) - y) < 1e-9);
    CHECK(step.displacement.value()[0] == doctest::Approx(step.raw.value()[0] * cfg.position_scale));
    prev = slice_cols(step.raw, 0, 2);
    state = step.state;
  }
}

TEST_CASE("link functions keep sigma positive and rho inside the unit interval") {
  const ModelConfig cfg = small_config();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ParamStore params = init_params(cfg, seed);
    // Blow up the output head so links are pushed to their limits.
    for (auto& v : params.value("decoder.W_out").storage()) v *= 100.0;
    Tape tape(false);
    const PredictedTrajectory p = to_prediction(decode_rollout(tape, params, cfg, fake_encoding(tape, cfg, seed)));
    for (const auto& s : p.steps) {
      CHECK(s.sigma_x > 0.0);
      CHECK(s.sigma_y > 0.0);
      CHECK(std::abs(s.rho) < 1.0);
    }
  }
}

TEST_CASE("decoder is a pure function of its inputs") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 4);
  Tape tape(false);
  const EncodedScene enc = fake_encoding(tape, cfg, 5);
  CHECK(decode_rollout(tape, params, cfg, enc).mu.value() == decode_rollout(tape, params, cfg, enc).mu.value());
}

TEST_CASE("decoder gradients through three chained steps match finite differences") {
  const ModelConfig cfg = small_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ParamStore params = init_params(cfg, seed + 10);
    Rng rng(seed);
    Tensor ctx({1, cfg.d}), probe({1, 2});
    for (auto& v : ctx.storage()) v = rng.normal();
    for (auto& v : probe.storage()) v = rng.normal();
    const auto r = finite_diff_gradcheck(
        [&](Tape& t, const ParamStore& p) {
          LstmState state = initial_decoder_state(t, cfg);
          Var prev = t.constant(Tensor({1, 2}));
          Var context = t.constant(ctx);
          Var acc = t.constant(Tensor({1, 1}));
          for (int k = 0; k < 3; ++k) {
            const DecodeStep step = decode_step(t, p, cfg, context, prev, state);
            acc = add(acc, sum(mul(step.raw, t.constant(Tensor({1, 5}, 0.3 + k)))));
            prev = slice_cols(step.raw, 0, 2);
            state = step.state;
          }
          return acc;
        },
        params, 1e-5, {"decoder.W_ctx", "decoder.W_prev", "decoder.W_h", "decoder.b", "decoder.W_out", "decoder.b_out"});
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("predict returns K deterministic samples that differ from each other") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 6);
  const Scene scene = gen_synthetic(SyntheticKind::BrakingInteraction, 1, 7, {cfg.n_max, 0.05})[0];
  const auto one = predict(scene, params, cfg, 1, 9);
  REQUIRE(one.size() == 1);
  CHECK(one[0].scene_id == scene.scene_id);
  CHECK(one[0].steps.size() == kFutureSteps);

  const auto five = predict(scene, params, cfg, 5, 9);
  const auto again = predict(scene, params, cfg, 5, 9);
  REQUIRE(five.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(five[k].sample_index == k);
    CHECK(prediction_to_json_line(five[k]) == prediction_to_json_line(again[k]));
  }
  CHECK(prediction_to_json_line(five[0]) != prediction_to_json_line(five[1]));
  CHECK_THROWS_AS(predict(scene, params, cfg, 0, 9), ContractError);
}

TEST_CASE("prediction JSON round-trip") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 8);
  const Scene scene = gen_synthetic(SyntheticKind::LaneChange, 1, 2, {cfg.n_max, 0.05})[0];
  const PredictedTrajectory p = predict(scene, params, cfg, 2, 1)[1];
  const PredictedTrajectory q = prediction_from_json_line(prediction_to_json_line(p));
  CHECK(q.scene_id == p.scene_id);
  CHECK(q.sample_index == 1);
  REQUIRE(q.steps.size() == kFutureSteps);
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    CHECK(q.steps[t].mu_x == p.steps[t].mu_x);
    CHECK(q.steps[t].sigma_y == p.steps[t].sigma_y);
    CHECK(q.steps[t].rho == p.steps[t].rho);
  }
  CHECK_THROWS_AS(prediction_from_json_line("{\"sceneId\":\"a\"}"), DataError);
  CHECK_THROWS_AS(prediction_from_json_line("not json"), DataError);
}

TEST_CASE("flat decoder ablation emits 25 steps from the context alone") {
  ModelConfig cfg = small_config();
  cfg.ablation = Ablation::Decoder;
  const ParamStore params = init_params(cfg, 3);
  Tape tape(false);
  const TrajectoryVars v = decode_rollout(tape, params, cfg, fake_encoding(tape, cfg, 3));
  CHECK(v.mu.value().shape() == Shape{kFutureSteps, 2});
  CHECK(v.sigma.value().shape() == Shape{kFutureSteps, 2});
  CHECK(v.rho.value().shape() == Shape{kFutureSteps, 1});
}
