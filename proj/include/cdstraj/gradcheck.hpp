#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cdstraj/autodiff.hpp"

namespace cdstraj {

/// Builds a scalar loss on the given tape from the given parameters.
using LossBuilder = std::function<Var(Tape&, const ParamStore&)>;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

enum class FdStencil {
  Central,     // (f(x+h) - f(x-h)) / 2h
  Richardson,  // (8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h, fourth order
};

/// Relative error used by the gradient check: |a - b| / max(|a|, |b|, 1e-8).
double gradcheck_relative_error(double analytic, double numeric);

/// Compares tape gradients against central differences
/// (f(theta + h) - f(theta - h)) / 2h for every element of every parameter
/// (or only those named in `only`, when non-empty). The Richardson stencil
/// cancels the h^2 truncation term, which allows a larger h and so less
/// cancellation error when the loss value is large. `params` is perturbed in
/// place and restored. Throws DeterminismError when two evaluations at the
/// same point disagree.
GradcheckResult finite_diff_gradcheck(const LossBuilder& loss_fn, ParamStore& params, double h = 1e-5,
                                      const std::vector<std::string>& only = {},
                                      FdStencil stencil = FdStencil::Central);

}  // namespace cdstraj
