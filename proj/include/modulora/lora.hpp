// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapter over a frozen quantized base:
//   y = x * W_hat^T + (alpha/r) * (x * B) * A^T + bias
// A: [d_out x r] starts at zero, B: [d_in x r] starts N(0, 0.02^2), so a
// fresh layer computes exactly the frozen base. The base participates through
// the recompute-in-backward linear function; the adapter path runs in f64 on
// the tape and is the only part that trains.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "modulora/autodiff.hpp"
#include "modulora/lowprec_linear.hpp"
#include "modulora/quantize.hpp"

namespace modulora {

struct LoraAdapter {
  Variable a;  // [d_out x r], zero-init
  Variable b;  // [d_in x r], gaussian-init
  std::size_t rank = 0;
  double alpha = 0.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

inline constexpr double kAdapterInitStd = 0.02;

// Deterministic per seed. Warns (stderr) when rank exceeds half of
// min(d_in, d_out); throws ConfigError for rank 0 or alpha <= 0.
LoraAdapter init_adapter(std::size_t d_in, std::size_t d_out,
                         std::size_t rank, double alpha, std::uint64_t seed);

struct ModuLoraLayer {
  std::string name;
  std::shared_ptr<const QuantizedMatrix> weights;  // frozen, [d_out x d_in]
  LoraAdapter adapter;
  Variable bias;  // [1 x d_out]; requires_grad only when trainable
  MaterializationStrategy strategy =
      MaterializationStrategy::WeightMaterialize;
  std::shared_ptr<const Quantizer> matvec_hook;  // optional

  std::size_t d_in() const { return weights->cols; }
  std::size_t d_out() const { return weights->rows; }
};

ModuLoraLayer make_layer(std::string name,
                         std::shared_ptr<const QuantizedMatrix> weights,
                         std::size_t rank, double alpha, std::uint64_t seed,
                         MaterializationStrategy strategy,
                         bool bias_trainable = false);

// Records the full layer onto the tape. `ledger` tracks the base path's
// transient dequantization buffers.
Variable layer_forward(Tape& t, ModuLoraLayer& layer, const Variable& x,
                       MemoryLedger* ledger = nullptr);

// (dL/dA, dL/dB) accumulated by the most recent backward(). Throws
// ContractError when called before backward.
std::pair<DenseMatrix, DenseMatrix> grads_of_adapter(
    const ModuLoraLayer& layer);

// Why the adapter cannot be folded into the base: the base is integer codes
// on fixed grids, the adapter is arbitrary f64. merge_check quantifies the
// best available lossy path, requantizing dequantize(q) + (alpha/r)*A*B^T
// on the same (bits, group) budget. Pure: the layer is never modified.
struct MergeReport {
  bool exact_merge_possible = false;
  int bits = 0;
  std::size_t group_size = 0;
  double max_abs_error = 0.0;  // merged target vs lossy requantization
  double fro_error = 0.0;
  QuantizedMatrix lossy;       // the requantized merge
  std::string explanation;
};

MergeReport merge_check(const ModuLoraLayer& layer);

}  // namespace modulora
