// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/lowprec_linear.hpp"

#include <algorithm>
#include <any>

#include "modulora/errors.hpp"

namespace modulora {

namespace {

// RAII wrapper around a transient dequantization buffer; reports its
// lifetime to the ledger so the single-materialization property is enforced
// at the only place buffers can be created.
class MaterializedBuffer {
 public:
  MaterializedBuffer(std::size_t count, const LpLinearContext& ctx, Phase phase)
      : data_(count), ledger_(ctx.ledger), layer_(ctx.layer_name),
        phase_(phase) {
    if (ledger_) ledger_->on_alloc(layer_, phase_, data_.size() * 8);
  }
  ~MaterializedBuffer() {
    if (ledger_) ledger_->on_free(layer_, phase_, data_.size() * 8);
  }
  MaterializedBuffer(const MaterializedBuffer&) = delete;
  MaterializedBuffer& operator=(const MaterializedBuffer&) = delete;

  std::span<double> span() { return data_; }

 private:
  std::vector<double> data_;
  MemoryLedger* ledger_;
  std::string layer_;
  Phase phase_;
};

void check_ctx(const LpLinearContext& ctx) {
  if (!ctx.q) throw ContractError("lp_linear: missing quantized weights");
}

}  // namespace

MaterializationStrategy parse_strategy(std::string_view name) {
  if (name == "weight") return MaterializationStrategy::WeightMaterialize;
  if (name == "row") return MaterializationStrategy::RowMaterialize;
  if (name == "matvec") return MaterializationStrategy::QuantizerMatvec;
  throw ConfigError("unknown materialization strategy '" + std::string(name) +
                    "' (expected weight, row or matvec)");
}

std::string_view strategy_name(MaterializationStrategy s) {
  switch (s) {
    case MaterializationStrategy::WeightMaterialize: return "weight";
    case MaterializationStrategy::RowMaterialize: return "row";
    case MaterializationStrategy::QuantizerMatvec: return "matvec";
  }
  return "?";
}

void MemoryLedger::on_alloc(std::string_view layer, Phase phase,
                            std::size_t bytes) {
  current_ += bytes;
  peak_ = std::max(peak_, current_);
  events_.push_back(LedgerEvent{std::string(layer), phase, true, bytes});
}

void MemoryLedger::on_free(std::string_view layer, Phase phase,
                           std::size_t bytes) {
  if (bytes > current_) {
    throw ContractError("MemoryLedger: free of " + std::to_string(bytes) +
                        " bytes exceeds current " + std::to_string(current_));
  }
  current_ -= bytes;
  events_.push_back(LedgerEvent{std::string(layer), phase, false, bytes});
}

void MemoryLedger::reset() {
  current_ = 0;
  peak_ = 0;
  events_.clear();
}

LedgerReport ledger_assert_single_materialization(
    const MemoryLedger& ledger, std::span<const LayerDims> layers,
    MaterializationStrategy strategy) {
  LedgerReport rep;
  rep.observed_peak = ledger.peak_bytes();
  for (const LayerDims& l : layers) {
    const std::size_t weight_bytes = l.d_out * l.d_in * 8;
    rep.sum_of_layers += weight_bytes;
    std::size_t per_layer = 0;
    switch (strategy) {
      case MaterializationStrategy::WeightMaterialize:
        per_layer = weight_bytes;
        break;
      case MaterializationStrategy::RowMaterialize:
        per_layer = l.d_in * 8;
        break;
      case MaterializationStrategy::QuantizerMatvec:
        per_layer = 0;
        break;
    }
    rep.expected_peak = std::max(rep.expected_peak, per_layer);
  }

  if (strategy != MaterializationStrategy::QuantizerMatvec &&
      ledger.events().empty()) {
    rep.violations.push_back("no materialization events recorded");
  }
  // Replay: at most one buffer live at any time, and balance at zero.
  std::size_t live = 0, live_count = 0;
  for (std::size_t i = 0; i < ledger.events().size(); ++i) {
    const LedgerEvent& e = ledger.events()[i];
    if (e.alloc) {
      ++live_count;
      live += e.bytes;
      if (live_count > 1) {
        rep.violations.push_back(
            "event " + std::to_string(i) + ": layer '" + e.layer +
            "' materialized while another buffer is live");
      }
    } else {
      if (live_count == 0 || e.bytes > live) {
        rep.violations.push_back("event " + std::to_string(i) +
                                 ": free without matching alloc");
      } else {
        --live_count;
        live -= e.bytes;
      }
    }
  }
  if (live != 0) {
    rep.violations.push_back("materialized bytes not freed: " +
                             std::to_string(live));
  }
  if (rep.observed_peak != rep.expected_peak) {
    rep.violations.push_back(
        "peak " + std::to_string(rep.observed_peak) + " != largest single " +
        "buffer " + std::to_string(rep.expected_peak) +
        (rep.observed_peak == rep.sum_of_layers && layers.size() > 1
             ? " (peak equals the sum over layers)"
             : ""));
  }
  rep.passed = rep.violations.empty();
  return rep;
}

DenseMatrix lp_forward(const LpLinearContext& ctx, const DenseMatrix& x) {
  check_ctx(ctx);
  const QuantizedMatrix& q = *ctx.q;
  if (x.cols() != q.cols) {
    throw DimensionError("lp_forward: input cols " + std::to_string(x.cols()) +
                         " != weight cols " + std::to_string(q.cols));
  }
  const std::size_t m = x.rows(), d_out = q.rows, d_in = q.cols;
  DenseMatrix out(m, d_out);
  switch (ctx.strategy) {
    case MaterializationStrategy::WeightMaterialize: {
      MaterializedBuffer buf(d_out * d_in, ctx, Phase::Forward);
      dequantize_into(q, buf.span());
      for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t i = 0; i < d_out; ++i) {
          double acc = 0.0;
          const double* wrow = buf.span().data() + i * d_in;
          for (std::size_t j = 0; j < d_in; ++j) acc += x(s, j) * wrow[j];
          out(s, i) = acc;
        }
      }
      break;
    }
    case MaterializationStrategy::RowMaterialize: {
      MaterializedBuffer buf(d_in, ctx, Phase::Forward);
      for (std::size_t i = 0; i < d_out; ++i) {
        dequantize_row_into(q, i, buf.span());
        for (std::size_t s = 0; s < m; ++s) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d_in; ++j) acc += x(s, j) * buf.span()[j];
          out(s, i) = acc;
        }
      }
      break;
    }
    case MaterializationStrategy::QuantizerMatvec: {
      for (std::size_t s = 0; s < m; ++s) {
        const std::vector<double> row =
            ctx.matvec_hook ? ctx.matvec_hook->matvec(q, x.row(s))
                            : quantized_matvec(q, x.row(s));
        for (std::size_t i = 0; i < d_out; ++i) out(s, i) = row[i];
      }
      break;
    }
  }
  return out;
}

DenseMatrix lp_backward(const LpLinearContext& ctx,
                        const DenseMatrix& grad_out) {
  check_ctx(ctx);
  const QuantizedMatrix& q = *ctx.q;
  if (grad_out.cols() != q.rows) {
    throw DimensionError("lp_backward: grad cols " +
                         std::to_string(grad_out.cols()) + " != weight rows " +
                         std::to_string(q.rows));
  }
  const std::size_t m = grad_out.rows(), d_out = q.rows, d_in = q.cols;
  DenseMatrix grad_in(m, d_in);
  switch (ctx.strategy) {
    case MaterializationStrategy::WeightMaterialize: {
      MaterializedBuffer buf(d_out * d_in, ctx, Phase::Backward);
      dequantize_into(q, buf.span());
      for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t i = 0; i < d_out; ++i) {
          const double g = grad_out(s, i);
          const double* wrow = buf.span().data() + i * d_in;
          for (std::size_t j = 0; j < d_in; ++j) grad_in(s, j) += g * wrow[j];
        }
      }
      break;
    }
    case MaterializationStrategy::RowMaterialize: {
      MaterializedBuffer buf(d_in, ctx, Phase::Backward);
      for (std::size_t i = 0; i < d_out; ++i) {
        dequantize_row_into(q, i, buf.span());
        for (std::size_t s = 0; s < m; ++s) {
          const double g = grad_out(s, i);
          for (std::size_t j = 0; j < d_in; ++j) {
            grad_in(s, j) += g * buf.span()[j];
          }
        }
      }
      break;
    }
    case MaterializationStrategy::QuantizerMatvec: {
      for (std::size_t s = 0; s < m; ++s) {
        const std::vector<double> col =
            ctx.matvec_hook
                ? ctx.matvec_hook->matvec_transposed(q, grad_out.row(s))
                : quantized_matvec_transposed(q, grad_out.row(s));
        for (std::size_t j = 0; j < d_in; ++j) grad_in(s, j) = col[j];
      }
      break;
    }
  }
  return grad_in;
}

DenseMatrix LpLinearFunction::forward(
    FunctionContext& fctx, std::span<const DenseMatrix* const> inputs) {
  if (inputs.size() != 1) {
    throw ContractError("lp_linear: expected exactly one input");
  }
  // Save the context (packed-code reference, strategy, ledger) — and only
  // that. The dequantized weights from this pass are dropped on return.
  fctx.saved = ctx_;
  return lp_forward(ctx_, *inputs[0]);
}

std::vector<std::optional<DenseMatrix>> LpLinearFunction::backward(
    FunctionContext& fctx, const DenseMatrix& grad_out) {
  const auto& saved = std::any_cast<const LpLinearContext&>(fctx.saved);
  std::vector<std::optional<DenseMatrix>> grads;
  grads.emplace_back(lp_backward(saved, grad_out));
  return grads;
}

}  // namespace modulora
