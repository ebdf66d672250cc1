// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/lora.hpp"

#include <algorithm>
#include <iostream>
#include <string>

#include "modulora/errors.hpp"
#include "modulora/rng.hpp"

namespace modulora {

LoraAdapter init_adapter(std::size_t d_in, std::size_t d_out,
                         std::size_t rank, double alpha, std::uint64_t seed) {
  if (rank == 0) throw ConfigError("adapter rank must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("adapter alpha must be positive");
  if (rank > std::min(d_in, d_out) / 2) {
    std::cerr << "warning: adapter rank " << rank << " exceeds half of min("
              << d_in << ", " << d_out << "); the low-rank assumption is weak"
              << std::endl;
  }
  Rng rng(seed);
  LoraAdapter ad;
  ad.rank = rank;
  ad.alpha = alpha;
  ad.a = Variable::leaf(DenseMatrix(d_out, rank), /*requires_grad=*/true);
  ad.b = Variable::leaf(DenseMatrix::gaussian(d_in, rank, rng, 0.0,
                                              kAdapterInitStd),
                        /*requires_grad=*/true);
  return ad;
}

ModuLoraLayer make_layer(std::string name,
                         std::shared_ptr<const QuantizedMatrix> weights,
                         std::size_t rank, double alpha, std::uint64_t seed,
                         MaterializationStrategy strategy,
                         bool bias_trainable) {
  if (!weights) throw ContractError("make_layer: null weights");
  weights->validate();
  ModuLoraLayer layer;
  layer.name = std::move(name);
  layer.weights = std::move(weights);
  layer.adapter = init_adapter(layer.weights->cols, layer.weights->rows, rank,
                               alpha, seed);
  layer.bias = Variable::leaf(DenseMatrix(1, layer.weights->rows),
                              bias_trainable);
  layer.strategy = strategy;
  return layer;
}

Variable layer_forward(Tape& t, ModuLoraLayer& layer, const Variable& x,
                       MemoryLedger* ledger) {
  if (x.cols() != layer.d_in()) {
    throw DimensionError("layer '" + layer.name + "': input cols " +
                         std::to_string(x.cols()) + " != d_in " +
                         std::to_string(layer.d_in()));
  }
  LpLinearContext ctx;
  ctx.q = layer.weights;
  ctx.strategy = layer.strategy;
  ctx.ledger = ledger;
  ctx.layer_name = layer.name;
  ctx.matvec_hook = layer.matvec_hook;
  Variable base =
      register_custom(t, std::make_shared<LpLinearFunction>(std::move(ctx)),
                      {x});
  Variable xb = matmul(t, x, layer.adapter.b);             // [m x r]
  Variable ab = matmul(t, xb, transpose(t, layer.adapter.a));  // [m x d_out]
  Variable low_rank = scalar_mul(t, ab, layer.adapter.scaling());
  return bias_add(t, add(t, base, low_rank), layer.bias);
}

std::pair<DenseMatrix, DenseMatrix> grads_of_adapter(
    const ModuLoraLayer& layer) {
  if (!layer.adapter.a.has_grad() || !layer.adapter.b.has_grad()) {
    throw ContractError("grads_of_adapter: called before backward()");
  }
  return {layer.adapter.a.grad(), layer.adapter.b.grad()};
}

MergeReport merge_check(const ModuLoraLayer& layer) {
  const QuantizedMatrix& q = *layer.weights;
  const DenseMatrix delta = scale(
      matmul(layer.adapter.a.value(), transpose(layer.adapter.b.value())),
      layer.adapter.scaling());
  const DenseMatrix merged = add(dequantize(q), delta);

  MergeReport rep;
  rep.exact_merge_possible = false;
  rep.bits = q.bits;
  rep.group_size = q.group_size;
  rep.lossy = quantize_rtn(merged, q.bits, q.group_size);
  const DenseMatrix err = sub(merged, dequantize(rep.lossy));
  rep.max_abs_error = max_abs(err);
  rep.fro_error = frobenius_norm(err);
  rep.explanation =
      "base weights are integer codes on fixed grids; adding the f64 adapter "
      "product requires requantization, which loses precision";
  return rep;
}

}  // namespace modulora
