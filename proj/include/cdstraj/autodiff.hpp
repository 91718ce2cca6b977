#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cdstraj/tensor.hpp"

namespace cdstraj {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Ordered record of primitive ops. Each op stores its output value and a
/// closure that pushes the output adjoint onto its inputs. Replay runs the
/// closures in exact reverse recording order.
///
/// A tape built with `grad_enabled == false` records values only; that mode
/// backs sampling and evaluation where no adjoints are needed.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  /// Leaf bound to a ParamStore entry. Repeated lookups of the same name on
  /// one tape return the same leaf so adjoints accumulate. A tape serves a
  /// single store; mixing stores throws ContractError.
  Var parameter(const ParamStore& params, const std::string& name);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Adjoint slot for node `id`, zero-initialised on first use.
  Tensor& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_[id].grad.has_value(); }

  void run_backward(std::size_t loss_id);
  /// Adds every parameter leaf's adjoint into the matching ParamStore slot.
  void accumulate_param_grads(ParamStore& params) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param_name;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;  // stable addresses: Var::value() hands out references
  std::unordered_map<std::string, std::size_t> param_ids_;
  const ParamStore* bound_params_ = nullptr;
};

/// Runs reverse accumulation from a scalar loss and adds the resulting
/// parameter gradients into `params` (+=). Parameters the loss does not reach
/// keep whatever their slot held, which is zero after ParamStore::zero_grads.
void backward(Var loss, ParamStore& params);

// ---- primitive ops (all recorded on the tape of their first argument) ----

Var matmul(Var a, Var b);
/// y = xW (+ b broadcast over rows).
Var linear(Var x, Var W, std::optional<Var> b = std::nullopt);
Var add_bias(Var x, Var b);
/// Repeats a 1 x q row n times.
Var broadcast_rows(Var row, std::size_t n);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// 1 - a, elementwise.
Var one_minus(Var a);

Var leaky_relu(Var x, double slope = 0.1);
Var sigmoid(Var x);
Var tanh(Var x);
Var exp(Var x);
/// Natural log; non-positive inputs raise NumericError.
Var log(Var x);
Var square(Var x);
/// 1 / x; zero inputs raise NumericError.
Var reciprocal(Var x);

Var softmax_rows(Var x);
/// Softmax over the columns where `keep[c]` is true; excluded columns get
/// exactly zero weight. Rows with no kept column are all zero.
Var masked_softmax_rows(Var x, const std::vector<bool>& keep);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t start, std::size_t len);
Var slice_rows(Var x, std::size_t start, std::size_t len);
Var transpose(Var x);
Var reshape(Var x, Shape shape);
/// Multiplies row r by factors[r]; factors are constants.
Var scale_rows(Var x, const std::vector<double>& factors);

Var sum(Var x);
Var mean(Var x);
/// Column sums as a 1 x q row.
Var sum_rows(Var x);

// ---- plain (untaped) helpers ----

Tensor matmul_values(const Tensor& a, const Tensor& b);
double sigmoid_value(double x);

}  // namespace cdstraj
