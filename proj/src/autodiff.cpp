#include "cdstraj/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cdstraj/errors.hpp"

namespace cdstraj {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, nullptr, false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const ParamStore& params, const std::string& name) {
  if (bound_params_ == nullptr) {
    bound_params_ = &params;
  } else if (bound_params_ != &params) {
    throw ContractError("tape already holds leaves from a different parameter store");
  }
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{this, it->second};
  nodes_.push_back(Node{params.value(name), std::nullopt, nullptr, grad_enabled_, name});
  const std::size_t id = nodes_.size() - 1;
  param_ids_.emplace(name, id);
  return Var{this, id};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape != this) throw ContractError("operand recorded on a different tape");
    needs = needs || (grad_enabled_ && nodes_[v.id].requires_grad);
  }
  if (!needs) fn = nullptr;
  nodes_.push_back(Node{std::move(value), std::nullopt, std::move(fn), needs, {}});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  auto& node = nodes_[id];
  if (!node.grad) node.grad = Tensor::zeros(node.value.shape());
  return *node.grad;
}

void Tape::run_backward(std::size_t loss_id) {
  if (nodes_[loss_id].value.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(nodes_[loss_id].value.shape()));
  }
  if (!nodes_[loss_id].requires_grad) return;
  grad(loss_id)[0] += 1.0;
  for (std::size_t i = loss_id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || !node.grad) continue;
    node.backward(*this, *node.grad);
  }
}

void Tape::accumulate_param_grads(ParamStore& params) const {
  for (const auto& [name, id] : param_ids_) {
    const auto& node = nodes_[id];
    if (!node.grad) continue;
    auto& slot = params.grad(name);
    for (std::size_t k = 0; k < slot.numel(); ++k) slot[k] += (*node.grad)[k];
  }
}

void backward(Var loss, ParamStore& params) {
  if (loss.value().numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  loss.tape->run_backward(loss.id);
  loss.tape->accumulate_param_grads(params);
}

namespace {

bool needs(const Tape& t, Var v) { return t.requires_grad(v.id); }

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank2(Var a, const char* op) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

template <typename F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out = x;
  for (auto& v : out.storage()) v = f(v);
  return out;
}

}  // namespace

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
  if (b.rows() != p) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({n, q});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < q; ++j) out.at(i, j) += aik * b.at(k, j);
    }
  }
  return out;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var matmul(Var a, Var b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  Tape& t = *a.tape;
  Tensor out = matmul_values(a.value(), b.value());
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a.id);
    const Tensor& bv = tp.value(b.id);
    const std::size_t n = av.rows(), p = av.cols(), q = bv.cols();
    if (tp.requires_grad(a.id)) {
      Tensor& ga = tp.grad(a.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < p; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < q; ++j) s += g.at(i, j) * bv.at(k, j);
          ga.at(i, k) += s;
        }
    }
    if (tp.requires_grad(b.id)) {
      Tensor& gb = tp.grad(b.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < p; ++k) {
          const double aik = av.at(i, k);
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < q; ++j) gb.at(k, j) += aik * g.at(i, j);
        }
    }
  });
}

Var linear(Var x, Var W, std::optional<Var> b) {
  Var y = matmul(x, W);
  return b ? add_bias(y, *b) : y;
}

Var add_bias(Var x, Var b) {
  const std::size_t n = x.rows(), q = x.cols();
  if (b.value().numel() != q) {
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " does not match columns of " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < q; ++j) out.at(i, j) += bv[j];
  return x.tape->record(std::move(out), {x, b}, [x, b, n, q](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(x.id)) {
      Tensor& gx = tp.grad(x.id);
      for (std::size_t k = 0; k < g.numel(); ++k) gx[k] += g[k];
    }
    if (tp.requires_grad(b.id)) {
      Tensor& gb = tp.grad(b.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j) gb[j] += g.at(i, j);
    }
  });
}

Var broadcast_rows(Var row, std::size_t n) {
  const std::size_t q = row.value().numel();
  Tensor out({n, q});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < q; ++j) out.at(i, j) = row.value()[j];
  return row.tape->record(std::move(out), {row}, [row, n, q](Tape& tp, const Tensor& g) {
    Tensor& gr = tp.grad(row.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < q; ++j) gr[j] += g.at(i, j);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] += bv[k];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v.id)) continue;
      Tensor& gv = tp.grad(v.id);
      for (std::size_t k = 0; k < g.numel(); ++k) gv[k] += g[k];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] -= bv[k];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a.id)) {
      Tensor& ga = tp.grad(a.id);
      for (std::size_t k = 0; k < g.numel(); ++k) ga[k] += g[k];
    }
    if (tp.requires_grad(b.id)) {
      Tensor& gb = tp.grad(b.id);
      for (std::size_t k = 0; k < g.numel(); ++k) gb[k] -= g[k];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] *= bv[k];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a.id);
    const Tensor& bv2 = tp.value(b.id);
    if (tp.requires_grad(a.id)) {
      Tensor& ga = tp.grad(a.id);
      for (std::size_t k = 0; k < g.numel(); ++k) ga[k] += g[k] * bv2[k];
    }
    if (tp.requires_grad(b.id)) {
      Tensor& gb = tp.grad(b.id);
      for (std::size_t k = 0; k < g.numel(); ++k) gb[k] += g[k] * av[k];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = map_values(a.value(), [c](double v) { return c * v; });
  return a.tape->record(std::move(out), {a}, [a, c](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(a.id);
    for (std::size_t k = 0; k < g.numel(); ++k) ga[k] += c * g[k];
  });
}

Var add_scalar(Var a, double c) {
  Tensor out = map_values(a.value(), [c](double v) { return v + c; });
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(a.id);
    for (std::size_t k = 0; k < g.numel(); ++k) ga[k] += g[k];
  });
}

Var one_minus(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return 1.0 - v; });
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(a.id);
    for (std::size_t k = 0; k < g.numel(); ++k) ga[k] -= g[k];
  });
}

Var leaky_relu(Var x, double slope) {
  Tensor out = map_values(x.value(), [slope](double v) { return v >= 0.0 ? v : slope * v; });
  return x.tape->record(std::move(out), {x}, [x, slope](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x.id);
    Tensor& gx = tp.grad(x.id);
    for (std::size_t k = 0; k < g.numel(); ++k) gx[k] += (xv[k] >= 0.0 ? 1.0 : slope) * g[k];
  });
}

Var sigmoid(Var x) {
  Tensor out = map_values(x.value(), sigmoid_value);
  const std::size_t self = x.tape->size();
  return x.tape->record(std::move(out), {x}, [x, self](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    Tensor& gx = tp.grad(x.id);
    for (std::size_t k = 0; k < g.numel(); ++k) gx[k] += g[k] * y[k] * (1.0 - y[k]);
  });
}

Var tanh(Var x) {
  Tensor out = map_values(x.value(), [](double v) { return std::tanh(v); });
  const std::size_t self = x.tape->size();
  return x.tape->record(std::move(out), {x}, [x, self](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    Tensor& gx = tp.grad(x.id);
    for (std::size_t k = 0; k < g.numel(); ++k) gx[k] += g[k] * (1.0 - y[k] * y[k]);
  });
}

Var exp(Var x) {
  Tensor out = map_values(x.value(), [](double v) { return std::exp(v); });
  const std::size_t self = x.tape->size();
  return x.tape->record(std::move(out), {x}, [x, self](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    Tensor& gx = tp.grad(x.id);
    for (std::size_t k = 0; k < g.numel(); ++k) gx[k] += g[k] * y[k];
  });
}

Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
  }
  Tensor out = map_values(x.value(), [](double v) { return std::log(v); });
  return x.tape->record(std::move(out), {x}, [x](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x.id);
    Tensor& gx = tp.grad(x.id);
    for (std::size_t k = 0; k < g.numel(); ++k) gx[k] += g[k] / xv[k];
  });
}

Var square(Var x) {
  Tensor out = map_values(x.value(), [](double v) { return v * v; });
  return x.tape->record(std::move(out), {x}, [x](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x.id);
    Tensor& gx = tp.grad(x.id);
    for (std::size_t k = 0; k < g.numel(); ++k) gx[k] += 2.0 * xv[k] * g[k];
  });
}

Var reciprocal(Var x) {
  for (double v : x.value().data()) {
    if (v == 0.0) throw NumericError("reciprocal of zero");
  }
  Tensor out = map_values(x.value(), [](double v) { return 1.0 / v; });
  const std::size_t self = x.tape->size();
  return x.tape->record(std::move(out), {x}, [x, self](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    Tensor& gx = tp.grad(x.id);
    for (std::size_t k = 0; k < g.numel(); ++k) gx[k] -= g[k] * y[k] * y[k];
  });
}

namespace {

Var softmax_impl(Var x, const std::vector<bool>* keep) {
  const std::size_t n = x.rows(), m = x.cols();
  if (m == 0) throw DimensionError("softmax_rows: need at least one column");
  if (keep && keep->size() != m) {
    throw DimensionError("masked_softmax_rows: mask length " + std::to_string(keep->size()) + " vs " +
                         std::to_string(m) + " columns");
  }
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (!keep || (*keep)[j]) mx = std::max(mx, xv.at(i, j));
    if (!std::isfinite(mx)) continue;  // every column masked
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (keep && !(*keep)[j]) continue;
      out.at(i, j) = std::exp(xv.at(i, j) - mx);
      s += out.at(i, j);
    }
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= s;
  }
  const std::size_t self = x.tape->size();
  return x.tape->record(std::move(out), {x}, [x, self, n, m](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    Tensor& gx = tp.grad(x.id);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < m; ++j) gx.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

}  // namespace

Var softmax_rows(Var x) { return softmax_impl(x, nullptr); }

Var masked_softmax_rows(Var x, const std::vector<bool>& keep) { return softmax_impl(x, &keep); }

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != n) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.cols();
  }
  Tensor out({n, total});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, off + j) = v.at(i, j);
    off += v.cols();
  }
  return parts.front().tape->record(std::move(out), parts, [parts, offsets, n](Tape& tp, const Tensor& g) {
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (!tp.requires_grad(parts[p].id)) continue;
      Tensor& gp = tp.grad(parts[p].id);
      const std::size_t c = gp.cols();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gp.at(i, j) += g.at(i, offsets[p] + j);
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t m = parts.front().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.cols() != m) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.rows();
  }
  std::vector<double> data;
  data.reserve(total * m);
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(data.size());
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  Tensor out({total, m}, std::move(data));
  return parts.front().tape->record(std::move(out), parts, [parts, offsets](Tape& tp, const Tensor& g) {
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (!tp.requires_grad(parts[p].id)) continue;
      Tensor& gp = tp.grad(parts[p].id);
      for (std::size_t k = 0; k < gp.numel(); ++k) gp[k] += g[offsets[p] + k];
    }
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t len) {
  const std::size_t n = x.rows(), m = x.cols();
  if (len == 0 || start + len > m) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for " + shape_str(x.shape()));
  }
  Tensor out({n, len});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < len; ++j) out.at(i, j) = x.value().at(i, start + j);
  return x.tape->record(std::move(out), {x}, [x, start, len, n](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(x.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < len; ++j) gx.at(i, start + j) += g.at(i, j);
  });
}

Var slice_rows(Var x, std::size_t start, std::size_t len) {
  const std::size_t n = x.rows(), m = x.cols();
  if (len == 0 || start + len > n) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for " + shape_str(x.shape()));
  }
  const auto d = x.value().data();
  Tensor out({len, m}, std::vector<double>(d.begin() + start * m, d.begin() + (start + len) * m));
  return x.tape->record(std::move(out), {x}, [x, start, m](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(x.id);
    for (std::size_t k = 0; k < g.numel(); ++k) gx[start * m + k] += g[k];
  });
}

Var transpose(Var x) {
  require_rank2(x, "transpose");
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = x.value().at(i, j);
  return x.tape->record(std::move(out), {x}, [x, n, m](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(x.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx.at(i, j) += g.at(j, i);
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(x.id);
    for (std::size_t k = 0; k < g.numel(); ++k) gx[k] += g[k];
  });
}

Var scale_rows(Var x, const std::vector<double>& factors) {
  const std::size_t n = x.rows(), m = x.cols();
  if (factors.size() != n) {
    throw DimensionError("scale_rows: " + std::to_string(factors.size()) + " factors for " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) *= factors[i];
  return x.tape->record(std::move(out), {x}, [x, factors, n, m](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(x.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx.at(i, j) += factors[i] * g.at(i, j);
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(Tensor::scalar(s), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(x.id);
    const double g0 = g[0];
    for (std::size_t k = 0; k < gx.numel(); ++k) gx[k] += g0;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var sum_rows(Var x) {
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({1, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x.value().at(i, j);
  return x.tape->record(std::move(out), {x}, [x, n, m](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(x.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx.at(i, j) += g[j];
  });
}

}  // namespace cdstraj
