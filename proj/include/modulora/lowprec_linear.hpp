// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
//
// Linear layer over a frozen quantized weight matrix. The forward pass
// computes x * W_hat^T; the backward pass *re-dequantizes* W_hat to compute
// grad_out * W_hat instead of keeping the dequantized matrix alive between
// the passes. Only the packed codes are ever saved for backward, so the peak
// f64 footprint is one materialized buffer:
//   WeightMaterialize — the full d_out x d_in matrix, once per pass;
//   RowMaterialize    — a single d_in row, reused across rows;
//   QuantizerMatvec   — nothing; products are delegated to the quantizer's
//                       matvec hooks, which own any internal scratch.
// A MemoryLedger hooks the alloc/free of those buffers so tests can assert
// that the peak equals one layer's buffer and never a sum over layers.
#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "modulora/autodiff.hpp"
#include "modulora/matrix.hpp"
#include "modulora/quantize.hpp"

namespace modulora {

enum class MaterializationStrategy { WeightMaterialize, RowMaterialize,
                                     QuantizerMatvec };

// "weight" | "row" | "matvec"
MaterializationStrategy parse_strategy(std::string_view name);
std::string_view strategy_name(MaterializationStrategy s);

enum class Phase { Forward, Backward };

struct LedgerEvent {
  std::string layer;
  Phase phase;
  bool alloc;  // false = free
  std::size_t bytes;
};

class MemoryLedger {
 public:
  void on_alloc(std::string_view layer, Phase phase, std::size_t bytes);
  void on_free(std::string_view layer, Phase phase, std::size_t bytes);
  void reset();

  std::size_t current_bytes() const { return current_; }
  std::size_t peak_bytes() const { return peak_; }
  const std::vector<LedgerEvent>& events() const { return events_; }

 private:
  std::size_t current_ = 0;
  std::size_t peak_ = 0;
  std::vector<LedgerEvent> events_;
};

struct LayerDims {
  std::string name;
  std::size_t d_out = 0;
  std::size_t d_in = 0;
};

struct LedgerReport {
  bool passed = false;
  std::size_t observed_peak = 0;
  std::size_t expected_peak = 0;   // largest single buffer for the strategy
  std::size_t sum_of_layers = 0;   // what a keep-everything impl would hold
  std::vector<std::string> violations;
};

// Verifies the single-materialization discipline over a recorded
// forward+backward pass: peak == largest single layer buffer (exact), all
// allocs freed, and no two materialized buffers ever live at once.
LedgerReport ledger_assert_single_materialization(
    const MemoryLedger& ledger, std::span<const LayerDims> layers,
    MaterializationStrategy strategy);

// Everything lp_forward / lp_backward need to know. Copied into the autodiff
// FunctionContext at forward time; note it carries the packed-code reference,
// never dequantized data.
struct LpLinearContext {
  std::shared_ptr<const QuantizedMatrix> q;
  MaterializationStrategy strategy = MaterializationStrategy::WeightMaterialize;
  MemoryLedger* ledger = nullptr;                 // optional
  std::string layer_name;
  std::shared_ptr<const Quantizer> matvec_hook;   // optional, QuantizerMatvec
};

// x: [m x d_in] -> [m x d_out]
DenseMatrix lp_forward(const LpLinearContext& ctx, const DenseMatrix& x);
// grad_out: [m x d_out] -> grad_in: [m x d_in]; dequantizes W_hat again.
DenseMatrix lp_backward(const LpLinearContext& ctx,
                        const DenseMatrix& grad_out);

// Tape adapter. The quantized weights are frozen: the only gradient produced
// is the one for x.
class LpLinearFunction final : public CustomFunction {
 public:
  explicit LpLinearFunction(LpLinearContext ctx) : ctx_(std::move(ctx)) {}
  std::string_view name() const override { return "lp_linear"; }
  DenseMatrix forward(FunctionContext& fctx,
                      std::span<const DenseMatrix* const> inputs) override;
  std::vector<std::optional<DenseMatrix>> backward(
      FunctionContext& fctx, const DenseMatrix& grad_out) override;

 private:
  LpLinearContext ctx_;
};

}  // namespace modulora
