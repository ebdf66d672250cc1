// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <memory>

#include "modulora/errors.hpp"
#include "modulora/hash.hpp"
#include "modulora/lora.hpp"
#include "modulora/rng.hpp"
#include "test_util.hpp"

using namespace modulora;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return DenseMatrix::gaussian(r, c, rng);
}

std::shared_ptr<const QuantizedMatrix> random_base(std::size_t rows,
                                                   std::size_t cols, int bits,
                                                   std::uint64_t seed) {
  return std::make_shared<const QuantizedMatrix>(
      quantize_rtn(random_matrix(rows, cols, seed), bits, 0));
}

std::uint64_t digest(const QuantizedMatrix& q) {
  Fnv1a64 h;
  hash_quantized(h, q);
  return h.digest();
}

}  // namespace

TEST_CASE("adapter initialization") {
  const LoraAdapter ad = init_adapter(12, 8, 2, 16.0, 5);
  CHECK(ad.rank == 2);
  CHECK(ad.alpha == 16.0);
  CHECK(ad.scaling() == 8.0);
  CHECK(ad.a.rows() == 8);
  CHECK(ad.a.cols() == 2);
  CHECK(ad.b.rows() == 12);
  CHECK(ad.b.cols() == 2);
  CHECK(max_abs(ad.a.value()) == 0.0);  // product starts at zero
  CHECK(max_abs(ad.b.value()) > 0.0);
  CHECK(ad.a.requires_grad());
  CHECK(ad.b.requires_grad());

  const LoraAdapter same = init_adapter(12, 8, 2, 16.0, 5);
  CHECK(testutil::bits_equal(ad.b.value(), same.b.value()));
  const LoraAdapter other = init_adapter(12, 8, 2, 16.0, 6);
  CHECK(!testutil::bits_equal(ad.b.value(), other.b.value()));

  CHECK_THROWS_AS(init_adapter(12, 8, 0, 16.0, 5), ConfigError);
  CHECK_THROWS_AS(init_adapter(12, 8, 2, 0.0, 5), ConfigError);
  CHECK_THROWS_AS(init_adapter(12, 8, 2, -1.0, 5), ConfigError);
}

TEST_CASE("layer construction") {
  auto q = random_base(8, 12, 4, 1);
  ModuLoraLayer layer = make_layer("l", q, 2, 16.0, 5,
                                   MaterializationStrategy::WeightMaterialize);
  CHECK(layer.d_in() == 12);
  CHECK(layer.d_out() == 8);
  CHECK(layer.bias.rows() == 1);
  CHECK(layer.bias.cols() == 8);
  CHECK(!layer.bias.requires_grad());

  ModuLoraLayer with_bias =
      make_layer("lb", q, 2, 16.0, 5,
                 MaterializationStrategy::WeightMaterialize,
                 /*bias_trainable=*/true);
  CHECK(with_bias.bias.requires_grad());

  CHECK_THROWS_AS(make_layer("x", nullptr, 2, 16.0, 5,
                             MaterializationStrategy::WeightMaterialize),
                  ContractError);

  auto broken = std::make_shared<QuantizedMatrix>(*q);
  broken->scales[0] = 0.0f;
  CHECK_THROWS_AS(
      make_layer("x", std::shared_ptr<const QuantizedMatrix>(broken), 2, 16.0,
                 5, MaterializationStrategy::WeightMaterialize),
      NumericError);
}

TEST_CASE("a fresh layer computes exactly the frozen base") {
  auto q = random_base(8, 12, 4, 2);
  ModuLoraLayer layer = make_layer("l", q, 2, 16.0, 7,
                                   MaterializationStrategy::WeightMaterialize);
  const DenseMatrix x = random_matrix(5, 12, 3);

  LpLinearContext ctx;
  ctx.q = q;
  ctx.strategy = MaterializationStrategy::WeightMaterialize;
  const DenseMatrix base = lp_forward(ctx, x);

  Tape t;
  Variable y = layer_forward(t, layer, Variable::leaf(x));
  CHECK(testutil::bits_equal(y.value(), base));
}

TEST_CASE("zero base isolates the adapter term") {
  auto q = std::make_shared<const QuantizedMatrix>(make_zero_quantized(6, 10));
  ModuLoraLayer layer = make_layer("z", q, 3, 6.0, 9,
                                   MaterializationStrategy::WeightMaterialize);
  layer.adapter.a.set_value(random_matrix(6, 3, 10));
  const DenseMatrix x = random_matrix(4, 10, 11);

  Tape t;
  Variable y = layer_forward(t, layer, Variable::leaf(x));
  const DenseMatrix want =
      scale(matmul(matmul(x, layer.adapter.b.value()),
                   transpose(layer.adapter.a.value())),
            layer.adapter.scaling());
  CHECK(testutil::bits_equal(y.value(), want));
}

TEST_CASE("full layer matches the dense oracle") {
  auto q = random_base(7, 9, 3, 12);
  ModuLoraLayer layer = make_layer("f", q, 2, 8.0, 13,
                                   MaterializationStrategy::WeightMaterialize);
  layer.adapter.a.set_value(random_matrix(7, 2, 14));
  DenseMatrix bias(1, 7);
  {
    Rng rng(15);
    for (double& v : bias.data()) v = rng.gaussian();
  }
  layer.bias.set_value(bias);
  const DenseMatrix x = random_matrix(4, 9, 16);

  Tape t;
  Variable y = layer_forward(t, layer, Variable::leaf(x));

  const DenseMatrix base = matmul(x, transpose(dequantize(*q)));
  const DenseMatrix low_rank =
      scale(matmul(matmul(x, layer.adapter.b.value()),
                   transpose(layer.adapter.a.value())),
            layer.adapter.scaling());
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 7; ++j) {
      const double want = base(i, j) + low_rank(i, j) + bias(0, j);
      CHECK(testutil::rel_close(y.value()(i, j), want, 1e-12));
    }
  }
}

TEST_CASE("adapter gradients match central differences through the layer") {
  auto q = random_base(6, 8, 4, 20);
  for (MaterializationStrategy s :
       {MaterializationStrategy::WeightMaterialize,
        MaterializationStrategy::RowMaterialize,
        MaterializationStrategy::QuantizerMatvec}) {
    ModuLoraLayer layer = make_layer("g", q, 2, 4.0, 21, s,
                                     /*bias_trainable=*/true);
    layer.adapter.a.set_value(random_matrix(6, 2, 22));
    const DenseMatrix x = random_matrix(3, 8, 23);
    const DenseMatrix target = random_matrix(3, 6, 24);

    Tape t;
    Variable xv = Variable::leaf(x, true);
    backward(t, mse(t, layer_forward(t, layer, xv), target));

    auto loss_with = [&](Variable param, const DenseMatrix& value) {
      const DenseMatrix saved = param.value();
      param.set_value(value);
      Tape ft;
      const double loss =
          mse(ft, layer_forward(ft, layer, Variable::leaf(x)), target)
              .value()(0, 0);
      param.set_value(saved);
      return loss;
    };

    const DenseMatrix want_a = finite_diff_grad(
        [&](const DenseMatrix& m) { return loss_with(layer.adapter.a, m); },
        layer.adapter.a.value());
    const DenseMatrix want_b = finite_diff_grad(
        [&](const DenseMatrix& m) { return loss_with(layer.adapter.b, m); },
        layer.adapter.b.value());
    const DenseMatrix want_bias = finite_diff_grad(
        [&](const DenseMatrix& m) { return loss_with(layer.bias, m); },
        layer.bias.value());
    const DenseMatrix want_x = finite_diff_grad(
        [&](const DenseMatrix& m) {
          Tape ft;
          return mse(ft, layer_forward(ft, layer, Variable::leaf(m)), target)
              .value()(0, 0);
        },
        x);

    CHECK(testutil::max_rel_diff(layer.adapter.a.grad(), want_a) <= 1e-4);
    CHECK(testutil::max_rel_diff(layer.adapter.b.grad(), want_b) <= 1e-4);
    CHECK(testutil::max_rel_diff(layer.bias.grad(), want_bias) <= 1e-4);
    CHECK(testutil::max_rel_diff(xv.grad(), want_x) <= 1e-4);
  }
}

TEST_CASE("adapter gradient closed form") {
  auto q = random_base(6, 8, 4, 30);
  ModuLoraLayer layer = make_layer("c", q, 2, 4.0, 31,
                                   MaterializationStrategy::WeightMaterialize);
  layer.adapter.a.set_value(random_matrix(6, 2, 32));
  const DenseMatrix x = random_matrix(3, 8, 33);

  CHECK_THROWS_AS(grads_of_adapter(layer), ContractError);

  Tape t;
  backward(t, sum(t, layer_forward(t, layer, Variable::leaf(x))));
  const auto [ga, gb] = grads_of_adapter(layer);

  // dL/dA = s * G^T (x B) with G = dL/dy = ones for a sum loss.
  DenseMatrix ones(3, 6);
  for (double& v : ones.data()) v = 1.0;
  const DenseMatrix want_a = scale(
      matmul(transpose(ones), matmul(x, layer.adapter.b.value())),
      layer.adapter.scaling());
  // dL/dB = s * x^T G A
  const DenseMatrix want_b = scale(
      matmul(transpose(x), matmul(ones, layer.adapter.a.value())),
      layer.adapter.scaling());
  CHECK(testutil::max_rel_diff(ga, want_a) <= 1e-10);
  CHECK(testutil::max_rel_diff(gb, want_b) <= 1e-10);
}

TEST_CASE("doubling alpha doubles the adapter correction") {
  auto q = random_base(6, 8, 4, 40);
  ModuLoraLayer one = make_layer("a1", q, 2, 4.0, 41,
                                 MaterializationStrategy::WeightMaterialize);
  ModuLoraLayer two = make_layer("a2", q, 2, 8.0, 41,
                                 MaterializationStrategy::WeightMaterialize);
  const DenseMatrix a_val = random_matrix(6, 2, 42);
  one.adapter.a.set_value(a_val);
  two.adapter.a.set_value(a_val);
  const DenseMatrix x = random_matrix(3, 8, 43);

  LpLinearContext ctx;
  ctx.q = q;
  ctx.strategy = MaterializationStrategy::WeightMaterialize;
  const DenseMatrix base = lp_forward(ctx, x);

  Tape t;
  const DenseMatrix y1 = layer_forward(t, one, Variable::leaf(x)).value();
  const DenseMatrix y2 = layer_forward(t, two, Variable::leaf(x)).value();
  CHECK(max_abs_diff(sub(y2, base), scale(sub(y1, base), 2.0)) <= 1e-12);
}

TEST_CASE("layer rejects mismatched inputs") {
  auto q = random_base(6, 8, 4, 50);
  ModuLoraLayer layer = make_layer("m", q, 2, 4.0, 51,
                                   MaterializationStrategy::WeightMaterialize);
  Tape t;
  CHECK_THROWS_AS(
      layer_forward(t, layer, Variable::leaf(random_matrix(3, 7, 52))),
      DimensionError);
}

TEST_CASE("merging a zero adapter is the identity requantization") {
  auto q = random_base(6, 8, 4, 60);
  ModuLoraLayer layer = make_layer("mz", q, 2, 4.0, 61,
                                   MaterializationStrategy::WeightMaterialize);
  const std::uint64_t before = digest(*layer.weights);
  const MergeReport rep = merge_check(layer);
  CHECK(digest(*layer.weights) == before);  // pure
  CHECK(!rep.exact_merge_possible);
  CHECK(rep.bits == 4);
  CHECK(rep.group_size == 8);
  CHECK(rep.lossy.codes.words == q->codes.words);
  CHECK(rep.lossy.scales == q->scales);
  CHECK(rep.lossy.zeros == q->zeros);
  CHECK(rep.max_abs_error == 0.0);
  CHECK(rep.fro_error == 0.0);
  CHECK(!rep.explanation.empty());
}

TEST_CASE("merging a trained adapter is lossy") {
  auto q = random_base(6, 8, 4, 62);
  ModuLoraLayer layer = make_layer("mt", q, 2, 4.0, 63,
                                   MaterializationStrategy::WeightMaterialize);
  layer.adapter.a.set_value(random_matrix(6, 2, 64));
  const MergeReport rep = merge_check(layer);
  CHECK(!rep.exact_merge_possible);
  CHECK(rep.max_abs_error > 0.0);
  CHECK(rep.fro_error >= rep.max_abs_error);
}
