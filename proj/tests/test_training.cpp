#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cdstraj/errors.hpp"
#include "cdstraj/gradcheck.hpp"
#include "cdstraj/losses.hpp"
#include "cdstraj/optim.hpp"
#include "cdstraj/rng.hpp"
#include "cdstraj/trainer.hpp"

using namespace cdstraj;
namespace fs = std::filesystem;

namespace {

PredictedTrajectory constant_prediction(double mx, double my, double sx, double sy, double rho) {
  PredictedTrajectory p;
  p.steps.assign(kFutureSteps, GaussianParams2D{mx, my, sx, sy, rho});
  return p;
}

TrainConfig quick_config() {
  TrainConfig c = tiny_train_config();
  c.model.d = 8;
  c.model.n_heads = 2;
  c.model.d_c = 4;
  c.model.n_max = 3;
  c.model.gamma = 4;
  c.stage1_epochs = 2;
  c.stage2_epochs = 2;
  c.batch_size = 4;
  return c;
}

DatasetSplit quick_data(std::size_t n = 12) {
  const auto scenes = gen_synthetic(SyntheticKind::BrakingInteraction, n, 5, {3, 0.05});
  return split_dataset(scenes, {0.5, 0.25, 0.25}, 1);
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cdstraj_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("mse of a unit offset in both axes is 2 per step") {
  Tensor truth({kFutureSteps, 2});
  CHECK(mse_loss(constant_prediction(1, 1, 1, 1, 0), truth) == doctest::Approx(2.0 * kFutureSteps));
  PredictedTrajectory one = constant_prediction(0, 0, 1, 1, 0);
  one.steps[0].mu_x = 1.0;
  one.steps[0].mu_y = 1.0;
  CHECK(mse_loss(one, truth) == 2.0);
}

TEST_CASE("mse matches a direct summation") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor truth({kFutureSteps, 2});
    for (auto& v : truth.storage()) v = 50.0 * rng.normal();
    PredictedTrajectory p = constant_prediction(0, 0, 1, 1, 0);
    double want = 0.0;
    for (std::size_t t = 0; t < kFutureSteps; ++t) {
      p.steps[t].mu_x = 50.0 * rng.normal();
      p.steps[t].mu_y = 50.0 * rng.normal();
      want += std::pow(p.steps[t].mu_x - truth.at(t, 0), 2) + std::pow(p.steps[t].mu_y - truth.at(t, 1), 2);
    }
    CHECK(std::abs(mse_loss(p, truth) - want) <= 1e-12 * want);
    Tape tape(false);
    CHECK(std::abs(mse_loss(as_constants(tape, p), truth).value().item() - want) <= 1e-12 * want);
  }
  CHECK_THROWS_AS(mse_loss(constant_prediction(0, 0, 1, 1, 0), Tensor({24, 2})), ContractError);
}

TEST_CASE("nll of a standard Gaussian") {
  Tensor truth({kFutureSteps, 2});
  const double log2pi = std::log(2.0 * std::numbers::pi);
  CHECK(nll_loss(constant_prediction(0, 0, 1, 1, 0), truth) == doctest::Approx(kFutureSteps * log2pi).epsilon(1e-14));
  CHECK(nll_loss(constant_prediction(1, 0, 1, 1, 0), truth) ==
        doctest::Approx(kFutureSteps * (log2pi + 0.5)).epsilon(1e-14));
  CHECK(nll_loss(constant_prediction(0, 0, 1, 1, 0), truth, 2.0) ==
        doctest::Approx(2.0 * kFutureSteps * log2pi).epsilon(1e-14));
  CHECK_THROWS_AS(nll_loss(constant_prediction(0, 0, 0, 1, 0), truth), NumericError);
  CHECK_THROWS_AS(nll_loss(constant_prediction(0, 0, 1, 1, 1.0), truth), NumericError);
}

TEST_CASE("nll agrees with the bivariate normal density") {
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const double sx = std::exp(rng.normal()), sy = std::exp(rng.normal()), r = 0.99 * std::tanh(rng.normal());
    const double dx = rng.normal() * 2, dy = rng.normal() * 2;
    Tensor truth({kFutureSteps, 2});
    truth.at(0, 0) = dx;
    truth.at(0, 1) = dy;
    PredictedTrajectory p = constant_prediction(0, 0, sx, sy, r);
    for (std::size_t t = 1; t < kFutureSteps; ++t) p.steps[t] = {0, 0, 1, 1, 0};
    // -log N(d; 0, S) with S the explicit 2x2 covariance, via its inverse.
    const double a = sx * sx, b = r * sx * sy, c = sy * sy, det = a * c - b * b;
    const double maha = (c * dx * dx - 2 * b * dx * dy + a * dy * dy) / det;
    const double want = 0.5 * maha + std::log(2.0 * std::numbers::pi) + 0.5 * std::log(det) +
                        (kFutureSteps - 1) * std::log(2.0 * std::numbers::pi);
    CHECK(nll_loss(p, truth) == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("nll gradients match finite differences") {
  Rng rng(5);
  ParamStore params;
  Tensor raw({kFutureSteps, 5});
  for (auto& v : raw.storage()) v = 0.5 * rng.normal();
  params.add("raw", raw);
  Tensor truth({kFutureSteps, 2});
  for (auto& v : truth.storage()) v = rng.normal();
  const auto r = finite_diff_gradcheck(
      [&](Tape& t, const ParamStore& p) {
        Var x = t.parameter(p, "raw");
        TrajectoryVars v{slice_cols(x, 0, 2), exp(slice_cols(x, 2, 2)), scale(tanh(slice_cols(x, 4, 1)), 0.999)};
        return nll_loss(v, truth, 1.5);
      },
      params);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("adam leaves parameters alone under a zero gradient") {
  ParamStore p;
  p.add("w", Tensor({2, 2}, 0.7));
  p.zero_grads();
  AdamState st;
  for (int i = 0; i < 5; ++i) adam_step(p, st, {});
  CHECK(st.step == 5);
  for (double v : p.value("w").storage()) CHECK(v == 0.7);
}

TEST_CASE("adam matches a hand-computed scalar sequence") {
  ParamStore p;
  p.add("w", Tensor({1, 1}, 1.0));
  AdamState st;
  const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  double w = 1.0, m = 0.0, v = 0.0;
  const double grads[] = {0.5, -1.0, 2.0};
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    p.zero_grads();
    p.grad("w")[0] = g;
    adam_step(p, st, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.value("w")[0] == doctest::Approx(w).epsilon(1e-14));
  }
}

TEST_CASE("global-norm clipping") {
  ParamStore p;
  p.add("a", Tensor({1, 2}));
  p.add("b", Tensor({1, 1}));
  p.zero_grads();
  p.grad("a")[0] = 3.0;
  p.grad("b")[0] = 4.0;
  CHECK(grad_global_norm(p) == doctest::Approx(5.0));
  CHECK(clip_grad_norm(p, 10.0) == doctest::Approx(5.0));
  CHECK(p.grad("a")[0] == 3.0);
  CHECK(clip_grad_norm(p, 1.0) == doctest::Approx(5.0));
  CHECK(p.grad("a")[0] == doctest::Approx(0.6));
  CHECK(p.grad("b")[0] == doctest::Approx(0.8));
  CHECK(grad_global_norm(p) == doctest::Approx(1.0));
}

TEST_CASE("training config JSON round-trip and validation") {
  TrainConfig c = quick_config();
  c.learning_rate = 2.5e-4;
  c.teacher_mode = false;
  c.model.ablation = Ablation::Spatial;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(back).size() == 16);

  c.learning_rate = 3e-4;
  CHECK(config_hash(back) != config_hash(c));

  const TrainConfig partial = train_config_from_json(nlohmann::json{{"batchSize", 3}});
  CHECK(partial.batch_size == 3);
  CHECK(partial.stage1_epochs == TrainConfig{}.stage1_epochs);

  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"learningRate", -1.0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"adamBetas", {0.9, 1.0}}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"stage1Epochs", 0}, {"stage2Epochs", 0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"d", 10}, {"n_heads", 4}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"batchSize", "four"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::array()), ConfigError);
  CHECK_THROWS_AS(load_train_config("/nonexistent/cfg.json"), ConfigError);
}

TEST_CASE("checkpoint round-trip") {
  const fs::path dir = temp_dir("ckpt");
  const TrainConfig cfg = quick_config();
  Checkpoint c;
  c.config = cfg;
  c.params = init_params(cfg.model, 3);
  c.params.zero_grads();
  adam_step(c.params, c.adam, {});
  c.epoch = 7;
  Rng rng(11);
  rng.normal();
  c.rng_state = rng.state();
  c.hash = config_hash(cfg);
  c.log.push_back({1, 1, 12.5, {1, 2, 3, 4, 5}, 0.25});
  c.best_val_rmse = 5.0;
  c.best_epoch = 1;
  save_checkpoint(dir / "c.json", c);
  const Checkpoint back = load_checkpoint(dir / "c.json");
  CHECK(back.epoch == 7);
  CHECK(back.hash == c.hash);
  CHECK(back.rng_state == c.rng_state);
  CHECK(back.adam.step == 1);
  CHECK(back.best_epoch == 1);
  REQUIRE(back.log.size() == 1);
  CHECK(log_csv_row(back.log[0]) == log_csv_row(c.log[0]));
  for (const auto& name : c.params.names()) CHECK(back.params.value(name) == c.params.value(name));

  std::ofstream(dir / "junk.json") << "{\"format\":\"other\"}";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.json"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("training log has one row per epoch and stage 2 can be skipped") {
  TrainConfig cfg = quick_config();
  cfg.stage2_epochs = 0;
  cfg.stage1_epochs = 3;
  const TrainResult r = train(quick_data(), cfg);
  REQUIRE(r.log.size() == 3);
  for (const auto& rec : r.log) CHECK(rec.stage == 1);
  CHECK(log_csv_header() == "epoch,stage,train_loss,val_rmse_1s,val_rmse_2s,val_rmse_3s,val_rmse_4s,val_rmse_5s");

  cfg.stage1_epochs = 1;
  cfg.stage2_epochs = 2;
  const TrainResult r2 = train(quick_data(), cfg);
  REQUIRE(r2.log.size() == 3);
  CHECK(r2.log[0].stage == 1);
  CHECK(r2.log[1].stage == 2);
  CHECK(r2.log[2].epoch == 3);
}

TEST_CASE("resuming from a mid-run checkpoint reproduces the uninterrupted run") {
  const fs::path dir = temp_dir("resume");
  const TrainConfig cfg = quick_config();
  const DatasetSplit data = quick_data();

  TrainOptions full;
  full.checkpoint_path = dir / "full.json";
  full.log_path = dir / "full.csv";
  const TrainResult a = train(data, cfg, full);

  TrainOptions first;
  first.checkpoint_path = dir / "part.json";
  first.log_path = dir / "part.csv";
  first.stop_after_epoch = 3;
  const TrainResult partial = train(data, cfg, first);
  CHECK(partial.log.size() == 3);

  TrainOptions second = first;
  second.stop_after_epoch.reset();
  second.resume_from = dir / "part.json";
  const TrainResult b = train(data, cfg, second);

  CHECK(slurp(dir / "full.csv") == slurp(dir / "part.csv"));
  for (const auto& name : a.params.names()) CHECK(a.params.value(name) == b.params.value(name));
  CHECK(fs::exists(dir / "full.json.best"));

  TrainConfig other = cfg;
  other.learning_rate *= 2;
  CHECK_THROWS_AS(train(data, other, second), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("training loss falls over the first epochs") {
  TrainConfig cfg = quick_config();
  cfg.stage1_epochs = 10;
  cfg.stage2_epochs = 0;
  const TrainResult r = train(quick_data(24), cfg);
  CHECK(r.log.back().train_loss < r.log.front().train_loss);
}

TEST_CASE("empty training split is rejected") {
  DatasetSplit empty;
  CHECK_THROWS_AS(train(empty, quick_config()), ConfigError);
}

TEST_CASE("loss terms at the default seed pass the finite-difference check") {
  TrainConfig cfg = quick_config();
  cfg.model.n_max = 2;
  const PipelineGradcheck g = pipeline_gradcheck(cfg, 0);
  CHECK(g.mse.max_rel_error < 1e-4);
  CHECK(g.nll.max_rel_error < 1e-4);
  CHECK(g.diffusion.max_rel_error < 1e-4);
  CHECK(g.loss_mse > 0.0);
}
