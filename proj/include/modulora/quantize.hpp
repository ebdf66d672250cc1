// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
//
// Affine min-max quantization of weight matrices into bit-packed integer
// codes plus per-(row, group) grids: W_hat = s * code + z. Two quantizers
// share the grid definition:
//   rtn  — round-to-nearest onto each group's grid, column independent.
//   optq — calibration-aware column sweep: quantize column j, divide the
//          residual by the j-th diagonal of the upper Cholesky factor U of
//          H^-1 (H = X^T X + damping * mean(diag) * I), and fold e * U[j,k]
//          into every not-yet-quantized column k > j.
// Scales and zeros are held in f32: that is what the checkpoint format
// stores, and keeping the in-memory value identical makes save/load
// roundtrips bit-exact. Dequantization lifts them to f64.
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "modulora/bitpack.hpp"
#include "modulora/hash.hpp"
#include "modulora/matrix.hpp"

namespace modulora {

struct QuantizedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bits = 0;
  std::size_t group_size = 0;  // divides cols
  PackedCodes codes;           // rows*cols codes, row-major
  std::vector<float> scales;   // rows * num_groups, row-major by group
  std::vector<float> zeros;    // same layout as scales

  std::size_t num_groups() const { return group_size ? cols / group_size : 0; }
  std::size_t packed_bytes() const { return codes.packed_bytes(); }
  std::size_t dequantized_bytes() const {
    return rows * cols * sizeof(double);
  }
  std::size_t row_bytes() const { return cols * sizeof(double); }

  // Internal consistency: supported width, group divides cols, code/grid
  // counts line up, every scale strictly positive. Throws on violation.
  void validate() const;
};

// group_size == 0 selects per-row grids (group_size = cols).
std::size_t normalize_group_size(std::size_t cols, std::size_t group_size);

DenseMatrix dequantize(const QuantizedMatrix& q);
std::vector<double> dequantize_row(const QuantizedMatrix& q, std::size_t row);
void dequantize_row_into(const QuantizedMatrix& q, std::size_t row,
                         std::span<double> out);
void dequantize_into(const QuantizedMatrix& q, std::span<double> out);

QuantizedMatrix quantize_rtn(const DenseMatrix& w, int bits,
                             std::size_t group_size = 0);

inline constexpr double kOptqDefaultDamping = 0.01;

// Scratch state for the OPTQ sweep, exposed for inspection in tests.
struct OptqWorkspace {
  DenseMatrix hessian;          // X^T X + damping * mean(diag) * I
  DenseMatrix inv_chol_upper;   // U with H^-1 = U^T U
};

OptqWorkspace build_optq_workspace(const DenseMatrix& calib, std::size_t dim,
                                   double damping);

QuantizedMatrix quantize_optq(const DenseMatrix& w, const DenseMatrix& calib,
                              int bits, std::size_t group_size = 0,
                              double damping = kOptqDefaultDamping);

// || X W^T - X W_hat^T ||_F^2 — the reconstruction objective optq minimizes.
double proxy_loss(const DenseMatrix& calib, const DenseMatrix& w,
                  const QuantizedMatrix& q);

// W_hat * v (v has q.cols entries) without materializing more than one row.
std::vector<double> quantized_matvec(const QuantizedMatrix& q,
                                     std::span<const double> v);
// W_hat^T * v (v has q.rows entries), row-streaming accumulation.
std::vector<double> quantized_matvec_transposed(const QuantizedMatrix& q,
                                                std::span<const double> v);

// Black-box quantizer interface. `calib` may be null for quantizers that do
// not use calibration data. The matvec hooks let a quantizer substitute its
// own kernels for the dequantize-and-multiply defaults.
class Quantizer {
 public:
  virtual ~Quantizer() = default;
  virtual std::string_view name() const = 0;
  virtual QuantizedMatrix quantize(const DenseMatrix& w,
                                   const DenseMatrix* calib, int bits,
                                   std::size_t group_size) const = 0;
  virtual std::vector<double> matvec(const QuantizedMatrix& q,
                                     std::span<const double> v) const {
    return quantized_matvec(q, v);
  }
  virtual std::vector<double> matvec_transposed(
      const QuantizedMatrix& q, std::span<const double> v) const {
    return quantized_matvec_transposed(q, v);
  }
};

class RtnQuantizer final : public Quantizer {
 public:
  std::string_view name() const override { return "rtn"; }
  QuantizedMatrix quantize(const DenseMatrix& w, const DenseMatrix* calib,
                           int bits, std::size_t group_size) const override;
};

class OptqQuantizer final : public Quantizer {
 public:
  explicit OptqQuantizer(double damping = kOptqDefaultDamping)
      : damping_(damping) {}
  std::string_view name() const override { return "optq"; }
  QuantizedMatrix quantize(const DenseMatrix& w, const DenseMatrix* calib,
                           int bits, std::size_t group_size) const override;

 private:
  double damping_;
};

// Factory by name ("rtn" | "optq"); throws ConfigError for unknown names.
std::unique_ptr<Quantizer> make_quantizer(std::string_view name);

// Exactly representable constructions (s = 1, z = 0 grids). Used for
// identity/zero task heads and for on-grid test fixtures where
// dequantize(make_*) must reproduce values with no error at all.
QuantizedMatrix make_identity_quantized(std::size_t n, int bits = 8);
QuantizedMatrix make_zero_quantized(std::size_t rows, std::size_t cols,
                                    int bits = 8);
// Random codes on random dyadic grids: every dequantized entry is an exact
// f64 value, so re-quantizing reproduces it bit-for-bit.
QuantizedMatrix make_grid_quantized(std::size_t rows, std::size_t cols,
                                    int bits, std::uint64_t seed);

// Folds all frozen state (dims, grids, codes) into a hash.
void hash_quantized(Fnv1a64& h, const QuantizedMatrix& q);

}  // namespace modulora
