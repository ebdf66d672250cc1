// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic tasks.
//   teacher_residual_regression — targets y = x * (W_teacher + dW)^T with a
//     planted low-rank perturbation dW; a rank >= rank(dW) adapter over a
//     base quantized from W_teacher can close the gap exactly (up to
//     quantization noise).
//   sequence_parity_classification — label = XOR of the token bits at a fixed
//     marked position subset; inputs arrive pre-embedded as [T x d_model]
//     (token embedding + positional code), sized for the one-block
//     transformer.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "modulora/matrix.hpp"
#include "modulora/rng.hpp"

namespace modulora {

enum class TaskKind { TeacherResidualRegression, SequenceParityClassification };

TaskKind parse_task(std::string_view name);  // "regression" | "parity"
std::string_view task_name(TaskKind kind);

struct TaskDims {
  // regression
  std::size_t d_in = 16;
  std::size_t d_out = 16;
  std::size_t n_train = 256;
  std::size_t n_test = 128;
  std::size_t planted_rank = 2;
  double residual_scale = 0.4;
  // parity
  std::size_t seq_len = 8;
  std::size_t d_model = 16;
  std::size_t n_marked = 2;
};

struct RegressionData {
  DenseMatrix teacher;   // [d_out x d_in]; empty when loaded from a cache
  DenseMatrix residual;  // planted low-rank perturbation, same shape
  DenseMatrix x_train, y_train;  // y = x * (teacher + residual)^T
  DenseMatrix x_test, y_test;
};

struct ParityData {
  std::vector<std::size_t> marked;  // positions XOR'd into the label
  std::vector<DenseMatrix> x_train, x_test;  // each [seq_len x d_model]
  std::vector<int> y_train, y_test;          // 0 | 1
};

struct SyntheticTask {
  TaskKind kind = TaskKind::TeacherResidualRegression;
  std::uint64_t seed = 0;
  TaskDims dims;
  std::variant<RegressionData, ParityData> data;

  const RegressionData& regression() const;
  RegressionData& regression();
  const ParityData& parity() const;
  ParityData& parity();
  std::size_t train_size() const;
  std::size_t test_size() const;
};

SyntheticTask make_task(TaskKind kind, std::uint64_t seed, TaskDims dims = {});

// Regression task around a caller-supplied teacher (bit-budget harness).
SyntheticTask make_regression_task_from_teacher(const DenseMatrix& teacher,
                                                const DenseMatrix& residual,
                                                std::uint64_t seed,
                                                std::size_t n_train,
                                                std::size_t n_test);

// Row-wise AR(1) correlated Gaussian (unit marginal variance): the kind of
// input that separates calibration-aware quantization from plain rounding.
DenseMatrix correlated_gaussian(std::size_t rows, std::size_t cols, double rho,
                                Rng& rng);

// JSONL dataset cache: one example per line,
//   {"split": "train"|"test", "x": [...row-major floats...], "y": ...}.
// save/load round-trip the example values exactly; generator metadata
// (teacher, residual) is not part of the cache.
void save_dataset_jsonl(const SyntheticTask& task, const std::string& path);
SyntheticTask load_dataset_jsonl(const std::string& path, TaskKind kind,
                                 TaskDims dims);

}  // namespace modulora
