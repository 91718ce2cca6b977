#include "cdstraj/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cdstraj/errors.hpp"

namespace cdstraj {

namespace {

double evaluate(const LossBuilder& loss_fn, const ParamStore& params) {
  Tape tape(false);
  return loss_fn(tape, params).value().item();
}

}  // namespace

double gradcheck_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradcheckResult finite_diff_gradcheck(const LossBuilder& loss_fn, ParamStore& params, double h,
                                      const std::vector<std::string>& only, FdStencil stencil) {
  if (!(h > 0.0)) throw ContractError("finite-difference step must be positive");
  const double base = evaluate(loss_fn, params);
  if (evaluate(loss_fn, params) != base) {
    throw DeterminismError("loss function is not deterministic: repeated evaluation differs");
  }

  ParamStore analytic = params;
  analytic.zero_grads();
  {
    Tape tape;
    Var loss = loss_fn(tape, analytic);
    backward(loss, analytic);
  }

  auto shifted = [&](double& slot, double orig, double offset) {
    slot = orig + offset;
    const double f = evaluate(loss_fn, params);
    slot = orig;
    return f;
  };

  GradcheckResult result;
  const auto names = only.empty() ? params.names() : only;
  for (const auto& name : names) {
    Tensor& value = params.value(name);
    const Tensor& grad = analytic.grad(name);
    for (std::size_t k = 0; k < value.numel(); ++k) {
      const double orig = value[k];
      const double d1 = shifted(value[k], orig, h) - shifted(value[k], orig, -h);
      double numeric = d1 / (2.0 * h);
      if (stencil == FdStencil::Richardson) {
        const double d2 = shifted(value[k], orig, 2.0 * h) - shifted(value[k], orig, -2.0 * h);
        numeric = (8.0 * d1 - d2) / (12.0 * h);
      }
      const double err = gradcheck_relative_error(grad[k], numeric);
      if (result.checked == 0 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = name;
        result.worst_index = k;
        result.analytic = grad[k];
        result.numeric = numeric;
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace cdstraj
