// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "modulora/errors.hpp"

namespace modulora {

namespace {

std::atomic<std::uint64_t> g_next_tape_serial{1};

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::string shape_str(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

// --- Variable ----------------------------------------------------------------

Variable Variable::leaf(DenseMatrix value, bool requires_grad) {
  Variable v;
  v.node_ = std::make_shared<detail::VarNode>();
  v.node_->value = std::move(value);
  v.node_->requires_grad = requires_grad;
  return v;
}

const DenseMatrix& Variable::value() const {
  if (!node_) throw ContractError("Variable: value() on empty handle");
  return node_->value;
}

void Variable::set_value(DenseMatrix v) {
  if (!node_) throw ContractError("Variable: set_value() on empty handle");
  if (v.rows() != node_->value.rows() || v.cols() != node_->value.cols()) {
    throw DimensionError("Variable: set_value shape " + shape_str(v) +
                         " != " + shape_str(node_->value));
  }
  node_->value = std::move(v);
}

bool Variable::requires_grad() const {
  return node_ && node_->requires_grad;
}

bool Variable::has_grad() const { return node_ && node_->grad.has_value(); }

const DenseMatrix& Variable::grad() const {
  if (!node_) throw ContractError("Variable: grad() on empty handle");
  if (!node_->grad) {
    throw ContractError("Variable: gradient read before backward()");
  }
  return *node_->grad;
}

void Variable::zero_grad() {
  if (node_) node_->grad.reset();
}

void accumulate_grad(const Variable& v, const DenseMatrix& g) {
  if (!v.requires_grad()) return;
  auto node = v.node();
  if (!node->grad) {
    node->grad.emplace(node->value.rows(), node->value.cols());
  }
  node->grad->accumulate(g);
}

// --- Tape --------------------------------------------------------------------

Tape::Tape() : serial_(g_next_tape_serial.fetch_add(1)) {}

Variable Tape::record(std::string_view op, std::vector<Variable> inputs,
                      DenseMatrix output_value, BackwardFn backward) {
  bool needs_grad = false;
  for (const Variable& in : inputs) {
    if (!in.defined()) throw ContractError(std::string(op) + ": empty input");
    needs_grad = needs_grad || in.requires_grad();
  }
  Variable out = Variable::leaf(std::move(output_value), needs_grad);
  out.node_->tape_serial = serial_;
  out.node_->producer = static_cast<std::int64_t>(records_.size());
  records_.push_back(OpRecord{std::string(op), std::move(inputs),
                              out, std::move(backward)});
  return out;
}

void Tape::set_visit_hook(
    std::function<void(std::size_t, std::string_view)> hook) {
  visit_hook_ = std::move(hook);
}

void Tape::backward_from(const Variable& loss) {
  if (!loss.defined()) throw ContractError("backward: empty loss handle");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward: loss must be 1x1, got " +
                        shape_str(loss.value()));
  }

  // Mark reachable records by walking producers back from the loss.
  std::vector<char> reachable(records_.size(), 0);
  std::vector<std::size_t> stack;
  auto push_producer = [&](const detail::VarNode& node) {
    if (node.producer >= 0 && node.tape_serial == serial_) {
      const auto idx = static_cast<std::size_t>(node.producer);
      if (!reachable[idx]) {
        reachable[idx] = 1;
        stack.push_back(idx);
      }
    }
  };
  push_producer(*loss.node());
  while (!stack.empty()) {
    const std::size_t idx = stack.back();
    stack.pop_back();
    for (const Variable& in : records_[idx].inputs) push_producer(*in.node());
  }

  DenseMatrix seed(1, 1);
  seed(0, 0) = 1.0;
  accumulate_grad(loss, seed);

  for (std::size_t i = records_.size(); i-- > 0;) {
    if (!reachable[i]) continue;
    OpRecord& rec = records_[i];
    if (visit_hook_) visit_hook_(i, rec.op);
    const auto& out_node = *rec.output.node();
    if (!out_node.requires_grad || !out_node.grad) continue;
    rec.fn(*out_node.grad, rec.inputs);
  }
}

void backward(Tape& t, const Variable& loss) { t.backward_from(loss); }

// --- ops ----------------------------------------------------------------------

Variable matmul(Tape& t, const Variable& a, const Variable& b) {
  DenseMatrix out = matmul(a.value(), b.value());
  return t.record(
      "matmul", {a, b}, std::move(out),
      [](const DenseMatrix& g, std::span<const Variable> in) {
        if (in[0].requires_grad()) {
          accumulate_grad(in[0], matmul(g, transpose(in[1].value())));
        }
        if (in[1].requires_grad()) {
          accumulate_grad(in[1], matmul(transpose(in[0].value()), g));
        }
      });
}

Variable add(Tape& t, const Variable& a, const Variable& b) {
  DenseMatrix out = add(a.value(), b.value());
  return t.record("add", {a, b}, std::move(out),
                  [](const DenseMatrix& g, std::span<const Variable> in) {
                    accumulate_grad(in[0], g);
                    accumulate_grad(in[1], g);
                  });
}

Variable bias_add(Tape& t, const Variable& x, const Variable& bias) {
  const DenseMatrix& xv = x.value();
  const DenseMatrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("bias_add: bias must be 1x" +
                         std::to_string(xv.cols()) + ", got " + shape_str(bv));
  }
  DenseMatrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      out(i, j) = xv(i, j) + bv(0, j);
    }
  }
  return t.record(
      "bias_add", {x, bias}, std::move(out),
      [](const DenseMatrix& g, std::span<const Variable> in) {
        accumulate_grad(in[0], g);
        if (in[1].requires_grad()) {
          DenseMatrix db(1, g.cols());
          for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) db(0, j) += g(i, j);
          }
          accumulate_grad(in[1], db);
        }
      });
}

namespace {

template <typename Fwd, typename Dfn>
Variable elementwise(Tape& t, const Variable& x, const char* name, Fwd f,
                     Dfn df) {
  const DenseMatrix& xv = x.value();
  DenseMatrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out.data()[i] = f(xv.data()[i]);
  return t.record(
      name, {x}, std::move(out),
      [df](const DenseMatrix& g, std::span<const Variable> in) {
        const DenseMatrix& v = in[0].value();
        DenseMatrix dx(v.rows(), v.cols());
        for (std::size_t i = 0; i < v.size(); ++i) {
          dx.data()[i] = g.data()[i] * df(v.data()[i]);
        }
        accumulate_grad(in[0], dx);
      });
}

}  // namespace

Variable tanh(Tape& t, const Variable& x) {
  return elementwise(
      t, x, "tanh", [](double v) { return std::tanh(v); },
      [](double v) {
        const double th = std::tanh(v);
        return 1.0 - th * th;
      });
}

Variable relu(Tape& t, const Variable& x) {
  return elementwise(
      t, x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Variable gelu(Tape& t, const Variable& x) {
  return elementwise(
      t, x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Variable softmax(Tape& t, const Variable& x) {
  const DenseMatrix& xv = x.value();
  DenseMatrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mx = xv(i, 0);
    for (std::size_t j = 1; j < xv.cols(); ++j) mx = std::max(mx, xv(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      out(i, j) = std::exp(xv(i, j) - mx);
      denom += out(i, j);
    }
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) /= denom;
  }
  DenseMatrix y = out;  // captured for the Jacobian-vector product
  return t.record(
      "softmax", {x}, std::move(out),
      [y](const DenseMatrix& g, std::span<const Variable> in) {
        DenseMatrix dx(y.rows(), y.cols());
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j) {
            dx(i, j) = y(i, j) * (g(i, j) - dot);
          }
        }
        accumulate_grad(in[0], dx);
      });
}

Variable layer_norm(Tape& t, const Variable& x, double eps) {
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
  const DenseMatrix& xv = x.value();
  const std::size_t d = xv.cols();
  DenseMatrix out(xv.rows(), d);
  std::vector<double> inv_std(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xv(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      out(i, j) = (xv(i, j) - mean) * inv_std[i];
    }
  }
  DenseMatrix xhat = out;
  return t.record(
      "layer_norm", {x}, std::move(out),
      [xhat, inv_std](const DenseMatrix& g, std::span<const Variable> in) {
        const std::size_t d = xhat.cols();
        DenseMatrix dx(xhat.rows(), d);
        for (std::size_t i = 0; i < xhat.rows(); ++i) {
          double mg = 0.0, mgx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            mg += g(i, j);
            mgx += g(i, j) * xhat(i, j);
          }
          mg /= static_cast<double>(d);
          mgx /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            dx(i, j) = inv_std[i] * (g(i, j) - mg - xhat(i, j) * mgx);
          }
        }
        accumulate_grad(in[0], dx);
      });
}

Variable transpose(Tape& t, const Variable& x) {
  return t.record("transpose", {x}, transpose(x.value()),
                  [](const DenseMatrix& g, std::span<const Variable> in) {
                    accumulate_grad(in[0], transpose(g));
                  });
}

Variable scalar_mul(Tape& t, const Variable& x, double c) {
  return t.record("scalar_mul", {x}, scale(x.value(), c),
                  [c](const DenseMatrix& g, std::span<const Variable> in) {
                    accumulate_grad(in[0], scale(g, c));
                  });
}

Variable sum(Tape& t, const Variable& x) {
  DenseMatrix out(1, 1);
  for (double v : x.value().data()) out(0, 0) += v;
  return t.record(
      "sum", {x}, std::move(out),
      [](const DenseMatrix& g, std::span<const Variable> in) {
        DenseMatrix dx(in[0].rows(), in[0].cols());
        for (double& v : dx.data()) v = g(0, 0);
        accumulate_grad(in[0], dx);
      });
}

Variable mse(Tape& t, const Variable& pred, const DenseMatrix& target) {
  const DenseMatrix& pv = pred.value();
  if (!pv.same_shape(target)) {
    throw DimensionError("mse: prediction " + shape_str(pv) + " vs target " +
                         shape_str(target));
  }
  const double n = static_cast<double>(pv.size());
  DenseMatrix out(1, 1);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv.data()[i] - target.data()[i];
    out(0, 0) += d * d;
  }
  out(0, 0) /= n;
  return t.record(
      "mse", {pred}, std::move(out),
      [target, n](const DenseMatrix& g, std::span<const Variable> in) {
        const DenseMatrix& p = in[0].value();
        DenseMatrix dx(p.rows(), p.cols());
        const double c = 2.0 * g(0, 0) / n;
        for (std::size_t i = 0; i < p.size(); ++i) {
          dx.data()[i] = c * (p.data()[i] - target.data()[i]);
        }
        accumulate_grad(in[0], dx);
      });
}

Variable cross_entropy(Tape& t, const Variable& logits,
                       std::span<const int> labels) {
  const DenseMatrix& lv = logits.value();
  if (labels.size() != lv.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(lv.rows()) + " rows");
  }
  const std::size_t m = lv.rows(), c = lv.cols();
  DenseMatrix probs(m, c);
  DenseMatrix out(1, 1);
  for (std::size_t i = 0; i < m; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw RangeError("cross_entropy: label " + std::to_string(y) +
                       " out of range [0, " + std::to_string(c) + ")");
    }
    double mx = lv(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs(i, j) = std::exp(lv(i, j) - mx);
      denom += probs(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs(i, j) /= denom;
    // log-sum-exp form: -log p_y = lse - logit_y, numerically stable.
    out(0, 0) += (std::log(denom) + mx) - lv(i, static_cast<std::size_t>(y));
  }
  out(0, 0) /= static_cast<double>(m);
  std::vector<int> labels_copy(labels.begin(), labels.end());
  return t.record(
      "cross_entropy", {logits}, std::move(out),
      [probs, labels_copy](const DenseMatrix& g,
                           std::span<const Variable> in) {
        const std::size_t m = probs.rows(), c = probs.cols();
        DenseMatrix dx(m, c);
        const double s = g(0, 0) / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot =
                (static_cast<std::size_t>(labels_copy[i]) == j) ? 1.0 : 0.0;
            dx(i, j) = s * (probs(i, j) - onehot);
          }
        }
        accumulate_grad(in[0], dx);
      });
}

Variable register_custom(Tape& t, std::shared_ptr<CustomFunction> fn,
                         std::vector<Variable> inputs) {
  if (!fn) throw ContractError("register_custom: null function");
  auto ctx = std::make_shared<FunctionContext>();
  std::vector<const DenseMatrix*> in_vals;
  in_vals.reserve(inputs.size());
  for (const Variable& v : inputs) {
    if (!v.defined()) throw ContractError("register_custom: empty input");
    in_vals.push_back(&v.value());
  }
  DenseMatrix out = fn->forward(*ctx, in_vals);
  return t.record(
      fn->name(), std::move(inputs), std::move(out),
      [fn, ctx](const DenseMatrix& g, std::span<const Variable> in) {
        std::vector<std::optional<DenseMatrix>> grads = fn->backward(*ctx, g);
        if (grads.size() != in.size()) {
          throw ContractError(std::string(fn->name()) + ": backward returned " +
                              std::to_string(grads.size()) + " grads for " +
                              std::to_string(in.size()) + " inputs");
        }
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (grads[i]) accumulate_grad(in[i], *grads[i]);
        }
      });
}

DenseMatrix finite_diff_grad(
    const std::function<double(const DenseMatrix&)>& f, const DenseMatrix& x,
    double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_grad: eps must be > 0");
  DenseMatrix g(x.rows(), x.cols());
  DenseMatrix xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = xp.data()[i];
    xp.data()[i] = orig + eps;
    const double fp = f(xp);
    xp.data()[i] = orig - eps;
    const double fm = f(xp);
    xp.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

}  // namespace modulora
