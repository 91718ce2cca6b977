#pragma once

#include "cdstraj/autodiff.hpp"
#include "cdstraj/decoder.hpp"

namespace cdstraj {

/// Sum over the 25 steps of squared x and y errors of the mean positions.
Var mse_loss(const TrajectoryVars& pred, const Tensor& truth);
double mse_loss(const PredictedTrajectory& pred, const Tensor& truth);

/// Exact bivariate Gaussian negative log-likelihood of the truth, summed over
/// steps and scaled by `alpha`:
///   q / (2 (1 - rho^2)) + log(2 pi) + log sx + log sy + 0.5 log(1 - rho^2),
///   q = (dx/sx)^2 + (dy/sy)^2 - 2 rho dx dy / (sx sy).
Var nll_loss(const TrajectoryVars& pred, const Tensor& truth, double alpha = 1.0);
double nll_loss(const PredictedTrajectory& pred, const Tensor& truth, double alpha = 1.0);

/// Builds the taped view of a plain prediction (constants only).
TrajectoryVars as_constants(Tape& tape, const PredictedTrajectory& pred);

}  // namespace cdstraj
