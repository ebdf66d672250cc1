// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "modulora/errors.hpp"
#include "modulora/hash.hpp"
#include "modulora/quantize.hpp"
#include "modulora/rng.hpp"
#include "modulora/tasks.hpp"
#include "test_util.hpp"

using namespace modulora;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return DenseMatrix::gaussian(r, c, rng);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("dequantization applies s*code + z per (row, group)") {
  QuantizedMatrix q;
  q.rows = 2;
  q.cols = 2;
  q.bits = 2;
  q.group_size = 2;
  q.codes = pack(std::vector<std::uint32_t>{0, 1, 2, 3}, 2);
  q.scales = {0.5f, 1.0f};
  q.zeros = {-1.0f, 0.0f};
  q.validate();

  const DenseMatrix w = dequantize(q);
  CHECK(w(0, 0) == -1.0);
  CHECK(w(0, 1) == -0.5);
  CHECK(w(1, 0) == 2.0);
  CHECK(w(1, 1) == 3.0);

  const std::vector<double> row1 = dequantize_row(q, 1);
  CHECK(row1[0] == 2.0);
  CHECK(row1[1] == 3.0);
  CHECK_THROWS_AS(dequantize_row(q, 2), RangeError);

  CHECK(q.num_groups() == 1);
  CHECK(q.row_bytes() == 16);
  CHECK(q.dequantized_bytes() == 32);
  CHECK(q.packed_bytes() == 4);
}

TEST_CASE("values already on the grid quantize exactly") {
  const DenseMatrix w = DenseMatrix::from({{0.0, 1.0, 2.0, 3.0}});
  const QuantizedMatrix q = quantize_rtn(w, 2, 4);
  CHECK(unpack(q.codes) == std::vector<std::uint32_t>{0, 1, 2, 3});
  CHECK(q.scales[0] == 1.0f);
  CHECK(q.zeros[0] == 0.0f);
  CHECK(testutil::bits_equal(dequantize(q), w));
}

TEST_CASE("round-to-nearest error stays within half a step") {
  std::size_t groups_checked = 0;
  for (int bits : {2, 3, 4, 8}) {
    for (std::size_t group : {std::size_t{4}, std::size_t{8},
                              std::size_t{16}}) {
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const DenseMatrix w = random_matrix(
            16, 32, seed * 100 + static_cast<std::uint64_t>(bits) * 10 + group);
        const QuantizedMatrix q = quantize_rtn(w, bits, group);
        const DenseMatrix w_hat = dequantize(q);
        const std::size_t ng = q.num_groups();
        for (std::size_t i = 0; i < w.rows(); ++i) {
          for (std::size_t g = 0; g < ng; ++g) {
            const double s = static_cast<double>(q.scales[i * ng + g]);
            for (std::size_t j = g * group; j < (g + 1) * group; ++j) {
              const double err = std::abs(w(i, j) - w_hat(i, j));
              CHECK(err <= 0.5 * s + 1e-6);
            }
            ++groups_checked;
          }
        }
      }
    }
  }
  CHECK(groups_checked >= 1000);
}

TEST_CASE("requantizing a dequantized matrix is a fixed point") {
  for (int bits : {2, 3, 4, 8}) {
    for (std::size_t group : {std::size_t{0}, std::size_t{4}}) {
      DenseMatrix w = random_matrix(8, 12, 40 + static_cast<std::uint64_t>(bits));
      for (std::size_t j = 0; j < w.cols(); ++j) w(3, j) = 0.7;  // flat row
      const QuantizedMatrix q1 = quantize_rtn(w, bits, group);
      const QuantizedMatrix q2 = quantize_rtn(dequantize(q1), bits, group);
      CHECK(q1.codes.words == q2.codes.words);
      CHECK(q1.scales == q2.scales);
      CHECK(q1.zeros == q2.zeros);
    }
  }
}

TEST_CASE("flat groups fall back to unit scale") {
  DenseMatrix w(3, 8);
  for (double& v : w.data()) v = 0.7;
  const QuantizedMatrix q = quantize_rtn(w, 4, 4);
  for (float s : q.scales) CHECK(s == 1.0f);
  for (float z : q.zeros) CHECK(z == 0.7f);
  for (std::uint32_t c : unpack(q.codes)) CHECK(c == 0u);
}

TEST_CASE("quantizers never mutate their input") {
  const DenseMatrix w = random_matrix(6, 8, 50);
  const DenseMatrix w_copy = w;
  const DenseMatrix calib = random_matrix(32, 8, 51);
  (void)quantize_rtn(w, 3, 0);
  (void)quantize_optq(w, calib, 3, 0);
  CHECK(testutil::bits_equal(w, w_copy));
}

TEST_CASE("grids rejected when misconfigured") {
  const DenseMatrix w = random_matrix(4, 12, 60);
  CHECK(normalize_group_size(12, 0) == 12);
  CHECK(normalize_group_size(12, 4) == 4);
  CHECK_THROWS_AS(quantize_rtn(w, 5, 0), ConfigError);
  CHECK_THROWS_AS(quantize_rtn(w, 3, 5), ConfigError);
  CHECK_THROWS_AS(quantize_rtn(DenseMatrix(), 3, 0), DimensionError);
}

TEST_CASE("validate catches inconsistent containers") {
  QuantizedMatrix q = quantize_rtn(random_matrix(4, 8, 70), 4, 4);
  CHECK_NOTHROW(q.validate());

  QuantizedMatrix bad_bits = q;
  bad_bits.bits = 5;
  CHECK_THROWS_AS(bad_bits.validate(), ConfigError);

  QuantizedMatrix bad_count = q;
  bad_count.codes.count -= 1;
  CHECK_THROWS_AS(bad_count.validate(), FormatError);

  QuantizedMatrix bad_grids = q;
  bad_grids.scales.pop_back();
  CHECK_THROWS_AS(bad_grids.validate(), FormatError);

  QuantizedMatrix bad_scale = q;
  bad_scale.scales[0] = 0.0f;
  CHECK_THROWS_AS(bad_scale.validate(), NumericError);

  QuantizedMatrix bad_group = q;
  bad_group.group_size = 3;
  CHECK_THROWS_AS(bad_group.validate(), ConfigError);
}

TEST_CASE("column sweep equals plain rounding for diagonal calibration") {
  const DenseMatrix w = random_matrix(6, 16, 80);
  const DenseMatrix calib = scale(DenseMatrix::identity(16), 2.0);
  const QuantizedMatrix rtn = quantize_rtn(w, 3, 0);
  const QuantizedMatrix optq = quantize_optq(w, calib, 3, 0);
  CHECK(rtn.codes.words == optq.codes.words);
  CHECK(rtn.scales == optq.scales);
  CHECK(rtn.zeros == optq.zeros);
}

TEST_CASE("column sweep reuses the grids of the original weights") {
  const DenseMatrix w = random_matrix(6, 16, 81);
  Rng rng(82);
  const DenseMatrix calib = correlated_gaussian(64, 16, 0.9, rng);
  const QuantizedMatrix rtn = quantize_rtn(w, 3, 0);
  const QuantizedMatrix optq = quantize_optq(w, calib, 3, 0);
  CHECK(rtn.scales == optq.scales);
  CHECK(rtn.zeros == optq.zeros);
}

TEST_CASE("calibration-aware sweep beats plain rounding on correlated data") {
  std::size_t wins = 0;
  std::vector<double> rtn_losses, optq_losses;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const DenseMatrix w = random_matrix(8, 16, 9000 + seed);
    Rng rng(9500 + seed);
    const DenseMatrix calib = correlated_gaussian(64, 16, 0.9, rng);
    const double l_rtn = proxy_loss(calib, w, quantize_rtn(w, 3, 0));
    const double l_optq = proxy_loss(calib, w, quantize_optq(w, calib, 3, 0));
    rtn_losses.push_back(l_rtn);
    optq_losses.push_back(l_optq);
    if (l_optq < l_rtn) ++wins;
  }
  CHECK(wins >= 90);
  CHECK(median(optq_losses) < median(rtn_losses));
}

TEST_CASE("workspace factor inverts the damped hessian") {
  Rng rng(90);
  const DenseMatrix calib = correlated_gaussian(64, 12, 0.7, rng);
  const OptqWorkspace ws = build_optq_workspace(calib, 12, 0.01);
  const DenseMatrix should_be_identity =
      matmul(ws.hessian, matmul(transpose(ws.inv_chol_upper),
                                ws.inv_chol_upper));
  CHECK(max_abs_diff(should_be_identity, DenseMatrix::identity(12)) <= 1e-8);

  // upper-triangular by construction
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      CHECK(ws.inv_chol_upper(i, j) == 0.0);
    }
  }
}

TEST_CASE("workspace rejects bad inputs") {
  const DenseMatrix w = random_matrix(4, 8, 91);
  const DenseMatrix calib = random_matrix(16, 8, 92);
  CHECK_THROWS_AS(quantize_optq(w, calib, 4, 0, -1.0), ConfigError);
  CHECK_THROWS_AS(build_optq_workspace(calib, 9, 0.01), DimensionError);
  CHECK_THROWS_AS(build_optq_workspace(DenseMatrix(16, 8), 8, 0.0),
                  NumericError);  // singular hessian, no damping
}

TEST_CASE("quantizer factory") {
  CHECK(make_quantizer("rtn")->name() == "rtn");
  CHECK(make_quantizer("optq")->name() == "optq");
  CHECK_THROWS_AS(make_quantizer("nf4"), ConfigError);

  const DenseMatrix w = random_matrix(4, 8, 93);
  CHECK_THROWS_AS(make_quantizer("optq")->quantize(w, nullptr, 4, 0),
                  ConfigError);
  const QuantizedMatrix q = make_quantizer("rtn")->quantize(w, nullptr, 4, 0);
  CHECK(q.codes.words == quantize_rtn(w, 4, 0).codes.words);
}

TEST_CASE("exactly representable constructions") {
  const QuantizedMatrix eye = make_identity_quantized(5);
  CHECK(testutil::bits_equal(dequantize(eye), DenseMatrix::identity(5)));
  CHECK_NOTHROW(eye.validate());

  const QuantizedMatrix zero = make_zero_quantized(3, 7);
  CHECK(max_abs(dequantize(zero)) == 0.0);
  CHECK_NOTHROW(zero.validate());

  for (int bits : {2, 3, 4, 8}) {
    const QuantizedMatrix grid = make_grid_quantized(6, 8, bits, 123);
    CHECK_NOTHROW(grid.validate());
    const QuantizedMatrix again =
        quantize_rtn(dequantize(grid), bits, grid.group_size);
    CHECK(grid.codes.words == again.codes.words);
    CHECK(grid.scales == again.scales);
    CHECK(grid.zeros == again.zeros);
  }
}

TEST_CASE("streamed matvec agrees with the dense product") {
  const QuantizedMatrix q = quantize_rtn(random_matrix(8, 12, 94), 4, 4);
  const DenseMatrix w = dequantize(q);
  Rng rng(95);
  std::vector<double> v(12), u(8);
  for (double& x : v) x = rng.gaussian();
  for (double& x : u) x = rng.gaussian();

  const std::vector<double> y = quantized_matvec(q, v);
  REQUIRE(y.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    double want = 0.0;
    for (std::size_t j = 0; j < 12; ++j) want += w(i, j) * v[j];
    CHECK(testutil::rel_close(y[i], want, 1e-12));
  }

  const std::vector<double> yt = quantized_matvec_transposed(q, u);
  REQUIRE(yt.size() == 12);
  for (std::size_t j = 0; j < 12; ++j) {
    double want = 0.0;
    for (std::size_t i = 0; i < 8; ++i) want += w(i, j) * u[i];
    CHECK(testutil::rel_close(yt[j], want, 1e-12));
  }

  CHECK_THROWS_AS(quantized_matvec(q, u), DimensionError);
  CHECK_THROWS_AS(quantized_matvec_transposed(q, v), DimensionError);
}

TEST_CASE("proxy loss validates shapes") {
  const DenseMatrix w = random_matrix(4, 8, 96);
  const QuantizedMatrix q = quantize_rtn(w, 4, 0);
  const DenseMatrix calib = random_matrix(16, 8, 97);
  CHECK(proxy_loss(calib, w, q) >= 0.0);
  CHECK_THROWS_AS(proxy_loss(random_matrix(16, 9, 98), w, q), DimensionError);
}

TEST_CASE("state hash tracks every frozen field") {
  const QuantizedMatrix q = quantize_rtn(random_matrix(4, 8, 99), 4, 4);
  auto digest = [](const QuantizedMatrix& m) {
    Fnv1a64 h;
    hash_quantized(h, m);
    return h.digest();
  };
  CHECK(digest(q) == digest(q));

  QuantizedMatrix flipped = q;
  flipped.codes.words[0] ^= 1u;
  CHECK(digest(flipped) != digest(q));

  QuantizedMatrix rescaled = q;
  rescaled.scales[0] += 0.25f;
  CHECK(digest(rescaled) != digest(q));
}
