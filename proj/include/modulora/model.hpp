// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy model assembly: an ordered list of adapter-carrying quantized linear
// layers plus the activation/norm plumbing between them. Two architectures:
//   mlp                — linear chain (teacher layer + identity-base head for
//                        the regression task; arbitrary chains for benches).
//   parity_transformer — one pre-norm block (quantized q/k/v/o and MLP
//                        projections) with mean pooling and a zero-base
//                        classifier head.
// Task heads are themselves adapter layers over exactly representable bases
// (identity or zero), so every trainable parameter in any model is an
// adapter factor (or a bias), and checkpoints need only one trainable
// record type.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "modulora/lora.hpp"
#include "modulora/tasks.hpp"

namespace modulora {

enum class ModelKind { Mlp, ParityTransformer };

ModelKind parse_model_kind(std::string_view name);
std::string_view model_kind_name(ModelKind kind);

struct ModelConfig {
  int schema_version = 1;
  ModelKind kind = ModelKind::Mlp;
  TaskKind task = TaskKind::TeacherResidualRegression;
  TaskDims task_dims;
  std::string activation = "none";  // between mlp chain layers: none | tanh
  std::string quantizer = "rtn";
  int bits = 4;
  std::size_t group_size = 0;  // 0 = per-row
  std::size_t rank = 8;
  double alpha = 32.0;
  std::size_t head_rank = 2;
  double head_alpha = 2.0;
  std::uint64_t base_seed = 1;
  std::uint64_t adapter_seed = 2;
  MaterializationStrategy strategy =
      MaterializationStrategy::WeightMaterialize;
  bool bias_trainable = false;
  std::size_t d_ff = 32;   // transformer MLP width
  double ln_eps = 1e-5;
  std::size_t calib_samples = 0;  // 0 = no calibration data
  double calib_rho = 0.6;         // row correlation of synthetic calibration
  double damping = kOptqDefaultDamping;

  void validate() const;  // throws ConfigError
};

// Stable (sorted-key) JSON round-trip; from_json throws ConfigError on
// missing or malformed fields.
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

struct ToyModel {
  ModelConfig config;
  std::vector<ModuLoraLayer> layers;

  // Adapter factors (and biases when trainable), layer order, A before B.
  std::vector<Variable> trainable_params();
  std::vector<std::string> trainable_param_names() const;
  void set_strategy(MaterializationStrategy s);
  // Digest of every layer's name and frozen quantized state.
  std::uint64_t frozen_state_hash() const;
};

// x: [n x d_in] -> [n x d_out] through the chain, activation between layers.
Variable mlp_forward(Tape& t, ToyModel& m, const Variable& x,
                     MemoryLedger* ledger = nullptr);

// One sequence [T x d_model] -> logits [1 x 2].
Variable transformer_forward(Tape& t, ToyModel& m, const Variable& x,
                             MemoryLedger* ledger = nullptr);

// Mean training loss over the given train-split example indices.
Variable model_loss(Tape& t, ToyModel& m, const SyntheticTask& task,
                    std::span<const std::size_t> indices,
                    MemoryLedger* ledger = nullptr);

struct EvalResult {
  std::string metric_name;  // test_mse | test_accuracy
  double metric = 0.0;
  double loss = 0.0;  // test MSE / mean test cross-entropy
};

EvalResult evaluate_model(ToyModel& m, const SyntheticTask& task,
                          MemoryLedger* ledger = nullptr);

struct LayerQuantReport {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bits = 0;
  std::size_t group_size = 0;
  std::size_t packed_bytes = 0;
  bool has_proxy = false;
  double proxy = 0.0;  // ||X W^T - X W_hat^T||_F^2 on this layer's calibration
};

struct BuiltModel {
  ToyModel model;
  std::vector<LayerQuantReport> reports;
};

// Builds the model for config.task from seeded synthetic weights, quantizing
// every non-head linear with the configured quantizer. Calibration inputs,
// when requested, are per-layer seeded correlated Gaussians.
BuiltModel build_model(const ModelConfig& config);

// Quantizes an explicit chain of full-precision weights into an mlp-kind
// model (bit-budget bench, memory bench fixtures).
BuiltModel build_chain_model(const ModelConfig& config,
                             const std::vector<DenseMatrix>& chain,
                             const std::vector<std::string>& names);

// Serialization bridge: plain frozen/trainable state, checked re-assembly.
struct LayerState {
  std::string name;
  QuantizedMatrix weights;
  std::vector<float> bias;  // length d_out
};

struct AdapterState {
  std::string layer_name;
  std::size_t rank = 0;
  float alpha = 0.0f;
  DenseMatrix a;  // [d_out x rank]
  DenseMatrix b;  // [d_in x rank]
};

ToyModel assemble_model(const ModelConfig& config,
                        std::vector<LayerState> layers,
                        std::vector<AdapterState> adapters);
std::vector<LayerState> extract_layer_states(const ToyModel& m);
std::vector<AdapterState> extract_adapter_states(const ToyModel& m);

}  // namespace modulora
