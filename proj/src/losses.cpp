#include "cdstraj/losses.hpp"

#include <cmath>
#include <numbers>

#include "cdstraj/data.hpp"
#include "cdstraj/errors.hpp"

namespace cdstraj {

namespace {

void check_lengths(const TrajectoryVars& pred, const Tensor& truth) {
  if (truth.numel() != kFutureSteps * 2) {
    throw ContractError("truth must have 25 steps, got shape " + shape_str(truth.shape()));
  }
  if (pred.mu.rows() != kFutureSteps || pred.mu.cols() != 2) {
    throw ContractError("prediction must have 25 steps, got shape " + shape_str(pred.mu.shape()));
  }
}

}  // namespace

TrajectoryVars as_constants(Tape& tape, const PredictedTrajectory& pred) {
  const std::size_t n = pred.steps.size();
  if (n == 0) throw ContractError("empty prediction");
  Tensor mu({n, 2}), sigma({n, 2}), rho({n, 1});
  for (std::size_t t = 0; t < n; ++t) {
    const auto& s = pred.steps[t];
    mu.at(t, 0) = s.mu_x;
    mu.at(t, 1) = s.mu_y;
    sigma.at(t, 0) = s.sigma_x;
    sigma.at(t, 1) = s.sigma_y;
    rho[t] = s.rho;
  }
  return {tape.constant(std::move(mu)), tape.constant(std::move(sigma)), tape.constant(std::move(rho))};
}

Var mse_loss(const TrajectoryVars& pred, const Tensor& truth) {
  check_lengths(pred, truth);
  Tape& tape = *pred.mu.tape;
  Var diff = sub(pred.mu, tape.constant(truth.reshaped({kFutureSteps, 2})));
  return sum(square(diff));
}

double mse_loss(const PredictedTrajectory& pred, const Tensor& truth) {
  Tape tape(false);
  return mse_loss(as_constants(tape, pred), truth).value().item();
}

Var nll_loss(const TrajectoryVars& pred, const Tensor& truth, double alpha) {
  check_lengths(pred, truth);
  for (double s : pred.sigma.value().data()) {
    if (!(s > 0.0) || !std::isfinite(s)) throw NumericError("nll_loss: non-positive sigma " + std::to_string(s));
  }
  for (double r : pred.rho.value().data()) {
    if (!(std::abs(r) < 1.0)) throw NumericError("nll_loss: |rho| >= 1 (" + std::to_string(r) + ")");
  }
  Tape& tape = *pred.mu.tape;
  Var delta = sub(tape.constant(truth.reshaped({kFutureSteps, 2})), pred.mu);
  Var z = mul(delta, reciprocal(pred.sigma));  // standardised residuals
  Var zx = slice_cols(z, 0, 1);
  Var zy = slice_cols(z, 1, 1);
  Var one_minus_r2 = one_minus(square(pred.rho));
  Var q = sub(add(square(zx), square(zy)), scale(mul(pred.rho, mul(zx, zy)), 2.0));
  Var mahal = mul(q, reciprocal(scale(one_minus_r2, 2.0)));
  Var log_sigma = log(pred.sigma);  // 25 x 2
  Var per_step = add(add(mahal, add(slice_cols(log_sigma, 0, 1), slice_cols(log_sigma, 1, 1))),
                     scale(log(one_minus_r2), 0.5));
  Var total = add_scalar(sum(per_step), static_cast<double>(kFutureSteps) * std::log(2.0 * std::numbers::pi));
  return scale(total, alpha);
}

double nll_loss(const PredictedTrajectory& pred, const Tensor& truth, double alpha) {
  Tape tape(false);
  return nll_loss(as_constants(tape, pred), truth, alpha).value().item();
}

}  // namespace cdstraj
