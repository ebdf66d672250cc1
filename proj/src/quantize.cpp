// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "modulora/errors.hpp"
#include "modulora/linalg.hpp"

namespace modulora {

namespace {

struct Grid {
  float scale;
  float zero;
};

// Min-max affine grid for one group of values. A flat group degenerates to
// s = 1 so the scale stays strictly positive; the same fallback guards the
// (pathological) case where the f32 rounding of a tiny range underflows to 0.
Grid compute_grid(std::span<const double> vals, int bits) {
  double lo = vals[0], hi = vals[0];
  for (double v : vals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double levels = static_cast<double>((1 << bits) - 1);
  Grid g;
  g.zero = static_cast<float>(lo);
  g.scale = (hi > lo) ? static_cast<float>((hi - lo) / levels) : 1.0f;
  if (!(g.scale > 0.0f)) g.scale = 1.0f;
  return g;
}

std::uint32_t code_on_grid(double w, const Grid& g, int bits) {
  const double levels = static_cast<double>((1 << bits) - 1);
  double c = std::round((w - static_cast<double>(g.zero)) /
                        static_cast<double>(g.scale));
  c = std::clamp(c, 0.0, levels);
  return static_cast<std::uint32_t>(c);
}

void validate_quantize_args(const DenseMatrix& w, int bits,
                            std::size_t group_size) {
  if (w.rows() == 0 || w.cols() == 0) {
    throw DimensionError("quantize: matrix must be non-empty");
  }
  if (!is_supported_bit_width(bits)) {
    throw ConfigError("quantize: unsupported bit width " +
                      std::to_string(bits));
  }
  if (group_size == 0 || w.cols() % group_size != 0) {
    throw ConfigError("quantize: group size " + std::to_string(group_size) +
                      " does not divide cols " + std::to_string(w.cols()));
  }
}

QuantizedMatrix assemble(const DenseMatrix& w, int bits,
                         std::size_t group_size, std::vector<float> scales,
                         std::vector<float> zeros,
                         std::span<const std::uint32_t> codes) {
  QuantizedMatrix q;
  q.rows = w.rows();
  q.cols = w.cols();
  q.bits = bits;
  q.group_size = group_size;
  q.scales = std::move(scales);
  q.zeros = std::move(zeros);
  q.codes = pack(codes, bits);
  return q;
}

}  // namespace

std::size_t normalize_group_size(std::size_t cols, std::size_t group_size) {
  return group_size == 0 ? cols : group_size;
}

void QuantizedMatrix::validate() const {
  if (!is_supported_bit_width(bits)) {
    throw ConfigError("QuantizedMatrix: unsupported bit width " +
                      std::to_string(bits));
  }
  if (codes.bits != bits) {
    throw ConfigError("QuantizedMatrix: packed bits " +
                      std::to_string(codes.bits) + " != " +
                      std::to_string(bits));
  }
  if (rows == 0 || cols == 0 || group_size == 0 || cols % group_size != 0) {
    throw ConfigError("QuantizedMatrix: group size " +
                      std::to_string(group_size) + " does not divide cols " +
                      std::to_string(cols));
  }
  if (codes.count != rows * cols) {
    throw FormatError(FormatError::Kind::BadField, 0,
                      "QuantizedMatrix: code count " +
                          std::to_string(codes.count) + " != rows*cols");
  }
  const std::size_t ng = rows * num_groups();
  if (scales.size() != ng || zeros.size() != ng) {
    throw FormatError(FormatError::Kind::BadField, 0,
                      "QuantizedMatrix: grid count mismatch (" +
                          std::to_string(scales.size()) + " scales, " +
                          std::to_string(zeros.size()) + " zeros, expected " +
                          std::to_string(ng) + ")");
  }
  for (float s : scales) {
    if (!(s > 0.0f)) {
      throw NumericError("QuantizedMatrix: non-positive scale");
    }
  }
}

DenseMatrix dequantize(const QuantizedMatrix& q) {
  DenseMatrix out(q.rows, q.cols);
  dequantize_into(q, out.data());
  return out;
}

void dequantize_into(const QuantizedMatrix& q, std::span<double> out) {
  if (out.size() != q.rows * q.cols) {
    throw DimensionError("dequantize_into: buffer size mismatch");
  }
  const std::vector<std::uint32_t> codes = unpack(q.codes);
  const std::size_t ng = q.num_groups();
  for (std::size_t i = 0; i < q.rows; ++i) {
    for (std::size_t j = 0; j < q.cols; ++j) {
      const std::size_t gidx = i * ng + j / q.group_size;
      out[i * q.cols + j] =
          static_cast<double>(q.scales[gidx]) * codes[i * q.cols + j] +
          static_cast<double>(q.zeros[gidx]);
    }
  }
}

void dequantize_row_into(const QuantizedMatrix& q, std::size_t row,
                         std::span<double> out) {
  if (row >= q.rows) {
    throw RangeError("dequantize_row: row " + std::to_string(row) +
                     " out of range [0, " + std::to_string(q.rows) + ")");
  }
  if (out.size() != q.cols) {
    throw DimensionError("dequantize_row_into: buffer size mismatch");
  }
  const std::vector<std::uint32_t> codes = unpack_row(q.codes, row, q.cols);
  const std::size_t ng = q.num_groups();
  for (std::size_t j = 0; j < q.cols; ++j) {
    const std::size_t gidx = row * ng + j / q.group_size;
    out[j] = static_cast<double>(q.scales[gidx]) * codes[j] +
             static_cast<double>(q.zeros[gidx]);
  }
}

std::vector<double> dequantize_row(const QuantizedMatrix& q, std::size_t row) {
  std::vector<double> out(q.cols);
  dequantize_row_into(q, row, out);
  return out;
}

QuantizedMatrix quantize_rtn(const DenseMatrix& w, int bits,
                             std::size_t group_size) {
  group_size = normalize_group_size(w.cols(), group_size);
  validate_quantize_args(w, bits, group_size);
  const std::size_t ng = w.cols() / group_size;
  std::vector<float> scales(w.rows() * ng);
  std::vector<float> zeros(w.rows() * ng);
  std::vector<std::uint32_t> codes(w.rows() * w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t g = 0; g < ng; ++g) {
      const Grid grid =
          compute_grid(w.row(i).subspan(g * group_size, group_size), bits);
      scales[i * ng + g] = grid.scale;
      zeros[i * ng + g] = grid.zero;
      for (std::size_t j = g * group_size; j < (g + 1) * group_size; ++j) {
        codes[i * w.cols() + j] = code_on_grid(w(i, j), grid, bits);
      }
    }
  }
  return assemble(w, bits, group_size, std::move(scales), std::move(zeros),
                  codes);
}

OptqWorkspace build_optq_workspace(const DenseMatrix& calib, std::size_t dim,
                                   double damping) {
  if (calib.rows() == 0 || calib.cols() != dim) {
    throw DimensionError("optq: calibration must be [m x " +
                         std::to_string(dim) + "], got " +
                         std::to_string(calib.rows()) + "x" +
                         std::to_string(calib.cols()));
  }
  if (!(damping >= 0.0)) {
    throw ConfigError("optq: damping must be non-negative");
  }
  OptqWorkspace ws;
  ws.hessian = matmul(transpose(calib), calib);
  double mean_diag = 0.0;
  for (std::size_t i = 0; i < dim; ++i) mean_diag += ws.hessian(i, i);
  mean_diag /= static_cast<double>(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    ws.hessian(i, i) += damping * mean_diag;
  }
  try {
    ws.inv_chol_upper = upper_cholesky_of_inverse(ws.hessian);
  } catch (const NumericError&) {
    throw NumericError(
        "optq: calibration Hessian not invertible after damping");
  }
  return ws;
}

QuantizedMatrix quantize_optq(const DenseMatrix& w, const DenseMatrix& calib,
                              int bits, std::size_t group_size,
                              double damping) {
  group_size = normalize_group_size(w.cols(), group_size);
  validate_quantize_args(w, bits, group_size);
  const OptqWorkspace ws = build_optq_workspace(calib, w.cols(), damping);
  const DenseMatrix& u = ws.inv_chol_upper;

  // Grids come from the original weights; the sweep only moves residuals.
  const std::size_t ng = w.cols() / group_size;
  std::vector<float> scales(w.rows() * ng);
  std::vector<float> zeros(w.rows() * ng);
  std::vector<Grid> grids(w.rows() * ng);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t g = 0; g < ng; ++g) {
      grids[i * ng + g] =
          compute_grid(w.row(i).subspan(g * group_size, group_size), bits);
      scales[i * ng + g] = grids[i * ng + g].scale;
      zeros[i * ng + g] = grids[i * ng + g].zero;
    }
  }

  DenseMatrix r = w;  // working copy; column j is frozen once quantized
  std::vector<std::uint32_t> codes(w.rows() * w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    const double ujj = u(j, j);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      const Grid& grid = grids[i * ng + j / group_size];
      const std::uint32_t c = code_on_grid(r(i, j), grid, bits);
      codes[i * w.cols() + j] = c;
      const double w_hat = static_cast<double>(grid.scale) * c +
                           static_cast<double>(grid.zero);
      const double e = (r(i, j) - w_hat) / ujj;
      r(i, j) = w_hat;
      for (std::size_t k = j + 1; k < w.cols(); ++k) {
        r(i, k) -= e * u(j, k);
      }
    }
  }
  return assemble(w, bits, group_size, std::move(scales), std::move(zeros),
                  codes);
}

double proxy_loss(const DenseMatrix& calib, const DenseMatrix& w,
                  const QuantizedMatrix& q) {
  if (calib.cols() != w.cols() || w.rows() != q.rows || w.cols() != q.cols) {
    throw DimensionError("proxy_loss: shape mismatch");
  }
  const DenseMatrix diff = sub(matmul(calib, transpose(w)),
                               matmul(calib, transpose(dequantize(q))));
  const double f = frobenius_norm(diff);
  return f * f;
}

std::vector<double> quantized_matvec(const QuantizedMatrix& q,
                                     std::span<const double> v) {
  if (v.size() != q.cols) {
    throw DimensionError("matvec: vector length " + std::to_string(v.size()) +
                         " != cols " + std::to_string(q.cols));
  }
  std::vector<double> out(q.rows, 0.0);
  std::vector<double> row(q.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    dequantize_row_into(q, i, row);
    double s = 0.0;
    for (std::size_t j = 0; j < q.cols; ++j) s += row[j] * v[j];
    out[i] = s;
  }
  return out;
}

std::vector<double> quantized_matvec_transposed(const QuantizedMatrix& q,
                                                std::span<const double> v) {
  if (v.size() != q.rows) {
    throw DimensionError("matvec_transposed: vector length " +
                         std::to_string(v.size()) + " != rows " +
                         std::to_string(q.rows));
  }
  std::vector<double> out(q.cols, 0.0);
  std::vector<double> row(q.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    dequantize_row_into(q, i, row);
    const double vi = v[i];
    for (std::size_t j = 0; j < q.cols; ++j) out[j] += vi * row[j];
  }
  return out;
}

QuantizedMatrix RtnQuantizer::quantize(const DenseMatrix& w,
                                       const DenseMatrix* /*calib*/, int bits,
                                       std::size_t group_size) const {
  return quantize_rtn(w, bits, group_size);
}

QuantizedMatrix OptqQuantizer::quantize(const DenseMatrix& w,
                                        const DenseMatrix* calib, int bits,
                                        std::size_t group_size) const {
  if (calib == nullptr) {
    throw ConfigError("optq requires calibration data");
  }
  return quantize_optq(w, *calib, bits, group_size, damping_);
}

std::unique_ptr<Quantizer> make_quantizer(std::string_view name) {
  if (name == "rtn") return std::make_unique<RtnQuantizer>();
  if (name == "optq") return std::make_unique<OptqQuantizer>();
  throw ConfigError("unknown quantizer '" + std::string(name) +
                    "' (expected rtn or optq)");
}

QuantizedMatrix make_identity_quantized(std::size_t n, int bits) {
  std::vector<std::uint32_t> codes(n * n, 0u);
  for (std::size_t i = 0; i < n; ++i) codes[i * n + i] = 1u;
  QuantizedMatrix q;
  q.rows = n;
  q.cols = n;
  q.bits = bits;
  q.group_size = n;
  q.scales.assign(n, 1.0f);
  q.zeros.assign(n, 0.0f);
  q.codes = pack(codes, bits);
  return q;
}

QuantizedMatrix make_zero_quantized(std::size_t rows, std::size_t cols,
                                    int bits) {
  std::vector<std::uint32_t> codes(rows * cols, 0u);
  QuantizedMatrix q;
  q.rows = rows;
  q.cols = cols;
  q.bits = bits;
  q.group_size = cols;
  q.scales.assign(rows, 1.0f);
  q.zeros.assign(rows, 0.0f);
  q.codes = pack(codes, bits);
  return q;
}

QuantizedMatrix make_grid_quantized(std::size_t rows, std::size_t cols,
                                    int bits, std::uint64_t seed) {
  Rng rng(seed);
  const std::uint32_t levels = 1u << bits;
  std::vector<std::uint32_t> codes(rows * cols);
  for (auto& c : codes) c = static_cast<std::uint32_t>(rng.uniform_index(levels));
  // Pin both endpoint codes in every row so a min-max requantization at the
  // same width recovers exactly this grid (and therefore these codes).
  if (cols >= 2) {
    for (std::size_t i = 0; i < rows; ++i) {
      codes[i * cols] = 0u;
      codes[i * cols + 1] = levels - 1u;
    }
  }
  QuantizedMatrix q;
  q.rows = rows;
  q.cols = cols;
  q.bits = bits;
  q.group_size = cols;
  q.scales.resize(rows);
  q.zeros.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    // Dyadic grids: scale = (8+k)/256, zero = m/64 are exact in f32, every
    // dequantized value s*c + z is exact in f64.
    q.scales[i] = static_cast<float>(8 + rng.uniform_index(8)) / 256.0f;
    q.zeros[i] = (static_cast<float>(rng.uniform_index(65)) - 32.0f) / 64.0f;
  }
  q.codes = pack(codes, bits);
  return q;
}

void hash_quantized(Fnv1a64& h, const QuantizedMatrix& q) {
  h.update_value(static_cast<std::uint64_t>(q.rows));
  h.update_value(static_cast<std::uint64_t>(q.cols));
  h.update_value(static_cast<std::int32_t>(q.bits));
  h.update_value(static_cast<std::uint64_t>(q.group_size));
  h.update_span(std::span<const std::uint32_t>(q.codes.words));
  h.update_span(std::span<const float>(q.scales));
  h.update_span(std::span<const float>(q.zeros));
}

}  // namespace modulora
