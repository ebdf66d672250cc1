// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over DenseMatrix values. A Tape records operations in
// execution order (which is a topological order by construction); backward()
// seeds d(loss)/d(loss) = 1 and replays reachable records in reverse, visiting
// each exactly once. Gradients accumulate additively into Variables until
// zero_grad(). A Tape belongs to one thread; Variables holding parameters may
// outlive the tape of any single step and be re-used on the next one.
#pragma once

#include <any>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modulora/matrix.hpp"

namespace modulora {

class Tape;

namespace detail {
struct VarNode {
  DenseMatrix value;
  std::optional<DenseMatrix> grad;
  bool requires_grad = false;
  // Identity of the op record that produced this node: tape serial number
  // plus record index. Leaves have producer == -1. A stale serial (node
  // produced by an earlier, discarded tape) degrades gracefully to a leaf.
  std::uint64_t tape_serial = 0;
  std::int64_t producer = -1;
};
}  // namespace detail

class Variable {
 public:
  Variable() = default;

  static Variable leaf(DenseMatrix value, bool requires_grad = false);

  const DenseMatrix& value() const;
  // Replaces the held value (optimizer write-back). Shape must be preserved.
  void set_value(DenseMatrix v);

  bool requires_grad() const;
  bool has_grad() const;
  // Throws ContractError when no gradient has been accumulated yet.
  const DenseMatrix& grad() const;
  void zero_grad();

  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

  bool defined() const { return node_ != nullptr; }
  bool same_node(const Variable& o) const { return node_ == o.node_; }

  std::shared_ptr<detail::VarNode> node() const { return node_; }

 private:
  friend class Tape;
  std::shared_ptr<detail::VarNode> node_;
};

// Adds g into v's gradient accumulator (no-op when !v.requires_grad()).
void accumulate_grad(const Variable& v, const DenseMatrix& g);

// Extension point for operations with hand-written gradients. forward() may
// stash whatever backward() needs into the per-application FunctionContext;
// backward() returns one slot per input, std::nullopt marking inputs that
// receive no gradient.
struct FunctionContext {
  std::any saved;
};

class CustomFunction {
 public:
  virtual ~CustomFunction() = default;
  virtual std::string_view name() const = 0;
  virtual DenseMatrix forward(FunctionContext& ctx,
                              std::span<const DenseMatrix* const> inputs) = 0;
  virtual std::vector<std::optional<DenseMatrix>> backward(
      FunctionContext& ctx, const DenseMatrix& grad_out) = 0;
};

class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  using BackwardFn =
      std::function<void(const DenseMatrix& grad_out,
                         std::span<const Variable> inputs)>;

  Variable record(std::string_view op, std::vector<Variable> inputs,
                  DenseMatrix output_value, BackwardFn backward);

  std::size_t num_records() const { return records_.size(); }
  std::uint64_t serial() const { return serial_; }

  // Instrumentation: called once per record visited during backward().
  void set_visit_hook(
      std::function<void(std::size_t record_index, std::string_view op)> hook);

  void backward_from(const Variable& loss);

 private:
  struct OpRecord {
    std::string op;
    std::vector<Variable> inputs;
    Variable output;
    BackwardFn fn;
  };

  std::vector<OpRecord> records_;
  std::uint64_t serial_;
  std::function<void(std::size_t, std::string_view)> visit_hook_;
};

// --- recorded operations ----------------------------------------------------

Variable matmul(Tape& t, const Variable& a, const Variable& b);
Variable add(Tape& t, const Variable& a, const Variable& b);
// x: [m x d], bias: [1 x d], added to every row.
Variable bias_add(Tape& t, const Variable& x, const Variable& bias);
Variable tanh(Tape& t, const Variable& x);
Variable relu(Tape& t, const Variable& x);
Variable gelu(Tape& t, const Variable& x);  // exact erf form
Variable softmax(Tape& t, const Variable& x);  // row-wise, max-subtracted
Variable layer_norm(Tape& t, const Variable& x, double eps = 1e-5);
Variable transpose(Tape& t, const Variable& x);
Variable scalar_mul(Tape& t, const Variable& x, double c);
Variable sum(Tape& t, const Variable& x);  // -> [1 x 1]
// Mean squared error against a constant target, over all entries. -> [1 x 1]
Variable mse(Tape& t, const Variable& pred, const DenseMatrix& target);
// Mean cross-entropy of row-wise logits against integer labels. -> [1 x 1]
Variable cross_entropy(Tape& t, const Variable& logits,
                       std::span<const int> labels);

Variable register_custom(Tape& t, std::shared_ptr<CustomFunction> fn,
                         std::vector<Variable> inputs);

// Seeds grad 1 at `loss` (must be 1x1) and propagates through `t`.
void backward(Tape& t, const Variable& loss);

// Central-difference gradient of a scalar function of one matrix.
DenseMatrix finite_diff_grad(
    const std::function<double(const DenseMatrix&)>& f, const DenseMatrix& x,
    double eps = 1e-5);

}  // namespace modulora
