// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/model.hpp"

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>

#include "json.hpp"
#include "modulora/errors.hpp"

namespace modulora {

using nlohmann::json;

namespace {

constexpr const char* kTransformerLayerNames[] = {
    "attn_q", "attn_k", "attn_v", "attn_o", "mlp_in", "mlp_out", "head"};
constexpr std::size_t kTransformerLayerCount = 7;

}  // namespace

ModelKind parse_model_kind(std::string_view name) {
  if (name == "mlp") return ModelKind::Mlp;
  if (name == "parity_transformer") return ModelKind::ParityTransformer;
  throw ConfigError("unknown model kind '" + std::string(name) +
                    "' (expected mlp or parity_transformer)");
}

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Mlp: return "mlp";
    case ModelKind::ParityTransformer: return "parity_transformer";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (!is_supported_bit_width(bits)) {
    throw ConfigError("model config: unsupported bit width " +
                      std::to_string(bits));
  }
  if (rank == 0) throw ConfigError("model config: rank must be >= 1");
  if (alpha <= 0.0) throw ConfigError("model config: alpha must be > 0");
  if (head_rank == 0) throw ConfigError("model config: head_rank must be >= 1");
  if (head_alpha <= 0.0) {
    throw ConfigError("model config: head_alpha must be > 0");
  }
  if (activation != "none" && activation != "tanh") {
    throw ConfigError("model config: activation must be none or tanh, got '" +
                      activation + "'");
  }
  if (quantizer != "rtn" && quantizer != "optq") {
    throw ConfigError("model config: quantizer must be rtn or optq, got '" +
                      quantizer + "'");
  }
  if (quantizer == "optq" && calib_samples == 0) {
    throw ConfigError(
        "model config: optq requires calibration data (calib_samples > 0)");
  }
  if (!(calib_rho > -1.0 && calib_rho < 1.0)) {
    throw ConfigError("model config: calib_rho must be in (-1, 1)");
  }
  if (damping < 0.0) throw ConfigError("model config: damping must be >= 0");
  if (ln_eps <= 0.0) throw ConfigError("model config: ln_eps must be > 0");
  if (d_ff == 0) throw ConfigError("model config: d_ff must be >= 1");
  if (task_dims.d_in == 0 || task_dims.d_out == 0 ||
      task_dims.d_model == 0 || task_dims.seq_len == 0) {
    throw ConfigError("model config: task dimensions must be >= 1");
  }
  if (task_dims.n_train == 0 || task_dims.n_test == 0) {
    throw ConfigError("model config: train/test sizes must be >= 1");
  }
  const bool regression = task == TaskKind::TeacherResidualRegression;
  if (regression != (kind == ModelKind::Mlp)) {
    throw ConfigError(
        "model config: regression pairs with mlp, parity with "
        "parity_transformer");
  }
}

std::string model_config_to_json(const ModelConfig& c) {
  json dims;
  dims["d_in"] = c.task_dims.d_in;
  dims["d_out"] = c.task_dims.d_out;
  dims["n_train"] = c.task_dims.n_train;
  dims["n_test"] = c.task_dims.n_test;
  dims["planted_rank"] = c.task_dims.planted_rank;
  dims["residual_scale"] = c.task_dims.residual_scale;
  dims["seq_len"] = c.task_dims.seq_len;
  dims["d_model"] = c.task_dims.d_model;
  dims["n_marked"] = c.task_dims.n_marked;

  json j;
  j["schema_version"] = c.schema_version;
  j["kind"] = std::string(model_kind_name(c.kind));
  j["task"] = std::string(task_name(c.task));
  j["task_dims"] = dims;
  j["activation"] = c.activation;
  j["quantizer"] = c.quantizer;
  j["bits"] = c.bits;
  j["group_size"] = c.group_size;
  j["rank"] = c.rank;
  j["alpha"] = c.alpha;
  j["head_rank"] = c.head_rank;
  j["head_alpha"] = c.head_alpha;
  j["base_seed"] = c.base_seed;
  j["adapter_seed"] = c.adapter_seed;
  j["strategy"] = std::string(strategy_name(c.strategy));
  j["bias_trainable"] = c.bias_trainable;
  j["d_ff"] = c.d_ff;
  j["ln_eps"] = c.ln_eps;
  j["calib_samples"] = c.calib_samples;
  j["calib_rho"] = c.calib_rho;
  j["damping"] = c.damping;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: invalid JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    c.schema_version = j.at("schema_version").get<int>();
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    c.task = parse_task(j.at("task").get<std::string>());
    const json& dims = j.at("task_dims");
    c.task_dims.d_in = dims.at("d_in").get<std::size_t>();
    c.task_dims.d_out = dims.at("d_out").get<std::size_t>();
    c.task_dims.n_train = dims.at("n_train").get<std::size_t>();
    c.task_dims.n_test = dims.at("n_test").get<std::size_t>();
    c.task_dims.planted_rank = dims.at("planted_rank").get<std::size_t>();
    c.task_dims.residual_scale = dims.at("residual_scale").get<double>();
    c.task_dims.seq_len = dims.at("seq_len").get<std::size_t>();
    c.task_dims.d_model = dims.at("d_model").get<std::size_t>();
    c.task_dims.n_marked = dims.at("n_marked").get<std::size_t>();
    c.activation = j.at("activation").get<std::string>();
    c.quantizer = j.at("quantizer").get<std::string>();
    c.bits = j.at("bits").get<int>();
    c.group_size = j.at("group_size").get<std::size_t>();
    c.rank = j.at("rank").get<std::size_t>();
    c.alpha = j.at("alpha").get<double>();
    c.head_rank = j.at("head_rank").get<std::size_t>();
    c.head_alpha = j.at("head_alpha").get<double>();
    c.base_seed = j.at("base_seed").get<std::uint64_t>();
    c.adapter_seed = j.at("adapter_seed").get<std::uint64_t>();
    c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    c.bias_trainable = j.at("bias_trainable").get<bool>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.ln_eps = j.at("ln_eps").get<double>();
    c.calib_samples = j.at("calib_samples").get<std::size_t>();
    c.calib_rho = j.at("calib_rho").get<double>();
    c.damping = j.at("damping").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: missing or bad field: ") +
                      e.what());
  }
  if (c.schema_version != 1) {
    throw ConfigError("model config: unsupported schema_version " +
                      std::to_string(c.schema_version));
  }
  c.validate();
  return c;
}

std::vector<Variable> ToyModel::trainable_params() {
  std::vector<Variable> out;
  for (ModuLoraLayer& layer : layers) {
    out.push_back(layer.adapter.a);
    out.push_back(layer.adapter.b);
    if (layer.bias.defined() && layer.bias.requires_grad()) {
      out.push_back(layer.bias);
    }
  }
  return out;
}

std::vector<std::string> ToyModel::trainable_param_names() const {
  std::vector<std::string> out;
  for (const ModuLoraLayer& layer : layers) {
    out.push_back(layer.name + ".A");
    out.push_back(layer.name + ".B");
    if (layer.bias.defined() && layer.bias.requires_grad()) {
      out.push_back(layer.name + ".bias");
    }
  }
  return out;
}

void ToyModel::set_strategy(MaterializationStrategy s) {
  config.strategy = s;
  for (ModuLoraLayer& layer : layers) layer.strategy = s;
}

std::uint64_t ToyModel::frozen_state_hash() const {
  Fnv1a64 h;
  h.update_value<std::uint64_t>(layers.size());
  for (const ModuLoraLayer& layer : layers) {
    h.update(layer.name.data(), layer.name.size());
    hash_quantized(h, *layer.weights);
  }
  return h.digest();
}

Variable mlp_forward(Tape& t, ToyModel& m, const Variable& x,
                     MemoryLedger* ledger) {
  if (m.layers.empty()) throw ContractError("mlp_forward: model has no layers");
  Variable h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    h = layer_forward(t, m.layers[i], h, ledger);
    if (i + 1 < m.layers.size() && m.config.activation == "tanh") {
      h = tanh(t, h);
    }
  }
  return h;
}

Variable transformer_forward(Tape& t, ToyModel& m, const Variable& x,
                             MemoryLedger* ledger) {
  if (m.layers.size() != kTransformerLayerCount) {
    throw ContractError("transformer_forward: expected " +
                        std::to_string(kTransformerLayerCount) + " layers");
  }
  const double eps = m.config.ln_eps;
  const std::size_t seq = x.rows();
  const double inv_sqrt_d =
      1.0 / std::sqrt(static_cast<double>(m.layers[0].d_out()));

  Variable ln1 = layer_norm(t, x, eps);
  Variable q = layer_forward(t, m.layers[0], ln1, ledger);
  Variable k = layer_forward(t, m.layers[1], ln1, ledger);
  Variable v = layer_forward(t, m.layers[2], ln1, ledger);
  Variable scores = scalar_mul(t, matmul(t, q, transpose(t, k)), inv_sqrt_d);
  Variable ctx = matmul(t, softmax(t, scores), v);
  Variable attn_out = layer_forward(t, m.layers[3], ctx, ledger);
  Variable h = add(t, x, attn_out);

  Variable ln2 = layer_norm(t, h, eps);
  Variable inner = gelu(t, layer_forward(t, m.layers[4], ln2, ledger));
  Variable ff = layer_forward(t, m.layers[5], inner, ledger);
  Variable h2 = add(t, h, ff);

  DenseMatrix pool_row(1, seq);
  for (std::size_t i = 0; i < seq; ++i) {
    pool_row(0, i) = 1.0 / static_cast<double>(seq);
  }
  Variable pooled = matmul(t, Variable::leaf(std::move(pool_row)), h2);
  return layer_forward(t, m.layers[6], pooled, ledger);
}

Variable model_loss(Tape& t, ToyModel& m, const SyntheticTask& task,
                    std::span<const std::size_t> indices,
                    MemoryLedger* ledger) {
  if (indices.empty()) throw ContractError("model_loss: empty batch");
  if (m.config.kind == ModelKind::Mlp) {
    const RegressionData& d = task.regression();
    DenseMatrix x(indices.size(), d.x_train.cols());
    DenseMatrix y(indices.size(), d.y_train.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const std::size_t idx = indices[i];
      if (idx >= d.x_train.rows()) {
        throw RangeError("model_loss: batch index out of range");
      }
      for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) = d.x_train(idx, j);
      for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) = d.y_train(idx, j);
    }
    Variable pred = mlp_forward(t, m, Variable::leaf(std::move(x)), ledger);
    return mse(t, pred, y);
  }
  const ParityData& d = task.parity();
  Variable total;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t idx = indices[i];
    if (idx >= d.x_train.size()) {
      throw RangeError("model_loss: batch index out of range");
    }
    Variable logits =
        transformer_forward(t, m, Variable::leaf(d.x_train[idx]), ledger);
    const int label[] = {d.y_train[idx]};
    Variable ce = cross_entropy(t, logits, label);
    total = total.defined() ? add(t, total, ce) : ce;
  }
  return scalar_mul(t, total, 1.0 / static_cast<double>(indices.size()));
}

EvalResult evaluate_model(ToyModel& m, const SyntheticTask& task,
                          MemoryLedger* ledger) {
  EvalResult r;
  if (m.config.kind == ModelKind::Mlp) {
    const RegressionData& d = task.regression();
    Tape t;
    Variable pred = mlp_forward(t, m, Variable::leaf(d.x_test), ledger);
    const DenseMatrix diff = sub(pred.value(), d.y_test);
    double sq = 0.0;
    for (double v : diff.data()) sq += v * v;
    r.metric_name = "test_mse";
    r.loss = sq / static_cast<double>(diff.size());
    r.metric = r.loss;
    return r;
  }
  const ParityData& d = task.parity();
  std::size_t correct = 0;
  double ce_sum = 0.0;
  for (std::size_t i = 0; i < d.x_test.size(); ++i) {
    Tape t;
    Variable logits =
        transformer_forward(t, m, Variable::leaf(d.x_test[i]), ledger);
    const double l0 = logits.value()(0, 0);
    const double l1 = logits.value()(0, 1);
    const int pred = l1 > l0 ? 1 : 0;
    if (pred == d.y_test[i]) ++correct;
    const double hi = l0 > l1 ? l0 : l1;
    const double lse = hi + std::log(std::exp(l0 - hi) + std::exp(l1 - hi));
    ce_sum += lse - (d.y_test[i] == 1 ? l1 : l0);
  }
  r.metric_name = "test_accuracy";
  r.metric = static_cast<double>(correct) / static_cast<double>(d.x_test.size());
  r.loss = ce_sum / static_cast<double>(d.x_test.size());
  return r;
}

namespace {

std::unique_ptr<Quantizer> quantizer_for(const ModelConfig& config) {
  if (config.quantizer == "optq") {
    return std::make_unique<OptqQuantizer>(config.damping);
  }
  return std::make_unique<RtnQuantizer>();
}

struct QuantizedLayerBuild {
  ModuLoraLayer layer;
  LayerQuantReport report;
};

// Quantizes one full-precision weight matrix with the configured quantizer
// and seeded synthetic calibration inputs, and wraps it into a layer.
QuantizedLayerBuild build_quantized_layer(const ModelConfig& config,
                                          const std::string& name,
                                          std::size_t layer_index,
                                          const DenseMatrix& w,
                                          std::size_t rank, double alpha) {
  const auto qz = quantizer_for(config);
  DenseMatrix calib;
  const DenseMatrix* calib_ptr = nullptr;
  if (config.calib_samples > 0) {
    Rng rng(mix_seed(config.base_seed, 0xCA00 + layer_index));
    calib = correlated_gaussian(config.calib_samples, w.cols(),
                                config.calib_rho, rng);
    calib_ptr = &calib;
  }
  auto q = std::make_shared<QuantizedMatrix>(
      qz->quantize(w, calib_ptr, config.bits, config.group_size));

  QuantizedLayerBuild out;
  out.report.name = name;
  out.report.rows = q->rows;
  out.report.cols = q->cols;
  out.report.bits = q->bits;
  out.report.group_size = q->group_size;
  out.report.packed_bytes = q->packed_bytes();
  if (calib_ptr != nullptr) {
    out.report.has_proxy = true;
    out.report.proxy = proxy_loss(calib, w, *q);
  }
  out.layer = make_layer(name, std::move(q), rank, alpha,
                         mix_seed(config.adapter_seed, layer_index),
                         config.strategy, config.bias_trainable);
  return out;
}

LayerQuantReport exact_layer_report(const ModuLoraLayer& layer) {
  LayerQuantReport r;
  r.name = layer.name;
  r.rows = layer.weights->rows;
  r.cols = layer.weights->cols;
  r.bits = layer.weights->bits;
  r.group_size = layer.weights->group_size;
  r.packed_bytes = layer.weights->packed_bytes();
  return r;
}

}  // namespace

BuiltModel build_model(const ModelConfig& config) {
  config.validate();
  BuiltModel out;
  out.model.config = config;

  if (config.kind == ModelKind::Mlp) {
    const SyntheticTask task =
        make_task(config.task, config.base_seed, config.task_dims);
    const DenseMatrix& teacher = task.regression().teacher;

    QuantizedLayerBuild fc1 = build_quantized_layer(
        config, "fc1", 0, teacher, config.rank, config.alpha);
    out.model.layers.push_back(std::move(fc1.layer));
    out.reports.push_back(std::move(fc1.report));

    auto head_q = std::make_shared<QuantizedMatrix>(
        make_identity_quantized(config.task_dims.d_out));
    ModuLoraLayer head = make_layer(
        "head", std::move(head_q), config.head_rank, config.head_alpha,
        mix_seed(config.adapter_seed, 1), config.strategy,
        config.bias_trainable);
    out.reports.push_back(exact_layer_report(head));
    out.model.layers.push_back(std::move(head));
    return out;
  }

  const std::size_t d = config.task_dims.d_model;
  const std::size_t d_ff = config.d_ff;
  const std::size_t shapes[kTransformerLayerCount - 1][2] = {
      {d, d}, {d, d}, {d, d}, {d, d}, {d_ff, d}, {d, d_ff}};
  for (std::size_t i = 0; i + 1 < kTransformerLayerCount; ++i) {
    const std::size_t rows = shapes[i][0];
    const std::size_t cols = shapes[i][1];
    Rng wr(mix_seed(config.base_seed, 0xB000 + i));
    const DenseMatrix w = DenseMatrix::gaussian(
        rows, cols, wr, 0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
    QuantizedLayerBuild b = build_quantized_layer(
        config, kTransformerLayerNames[i], i, w, config.rank, config.alpha);
    out.model.layers.push_back(std::move(b.layer));
    out.reports.push_back(std::move(b.report));
  }
  auto head_q =
      std::make_shared<QuantizedMatrix>(make_zero_quantized(2, d));
  ModuLoraLayer head = make_layer(
      "head", std::move(head_q), config.head_rank, config.head_alpha,
      mix_seed(config.adapter_seed, kTransformerLayerCount - 1),
      config.strategy, config.bias_trainable);
  out.reports.push_back(exact_layer_report(head));
  out.model.layers.push_back(std::move(head));
  return out;
}

BuiltModel build_chain_model(const ModelConfig& config,
                             const std::vector<DenseMatrix>& chain,
                             const std::vector<std::string>& names) {
  config.validate();
  if (config.kind != ModelKind::Mlp) {
    throw ConfigError("build_chain_model: chain models are mlp-kind");
  }
  if (chain.empty() || chain.size() != names.size()) {
    throw ConfigError("build_chain_model: need one name per chain weight");
  }
  for (std::size_t i = 1; i < chain.size(); ++i) {
    if (chain[i].cols() != chain[i - 1].rows()) {
      throw DimensionError("build_chain_model: layer " + std::to_string(i) +
                           " input dim does not match previous output dim");
    }
  }
  BuiltModel out;
  out.model.config = config;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    QuantizedLayerBuild b = build_quantized_layer(
        config, names[i], i, chain[i], config.rank, config.alpha);
    out.model.layers.push_back(std::move(b.layer));
    out.reports.push_back(std::move(b.report));
  }
  return out;
}

ToyModel assemble_model(const ModelConfig& config,
                        std::vector<LayerState> layers,
                        std::vector<AdapterState> adapters) {
  config.validate();
  if (adapters.size() != layers.size()) {
    throw ConfigError("assemble_model: expected exactly one adapter per layer");
  }
  std::unordered_set<std::string> seen;
  for (const LayerState& s : layers) {
    if (!seen.insert(s.name).second) {
      throw ConfigError("assemble_model: duplicate layer name '" + s.name +
                        "'");
    }
  }
  if (config.kind == ModelKind::ParityTransformer) {
    if (layers.size() != kTransformerLayerCount) {
      throw ConfigError("assemble_model: parity_transformer needs " +
                        std::to_string(kTransformerLayerCount) + " layers");
    }
    for (std::size_t i = 0; i < kTransformerLayerCount; ++i) {
      if (layers[i].name != kTransformerLayerNames[i]) {
        throw ConfigError("assemble_model: layer " + std::to_string(i) +
                          " must be '" +
                          std::string(kTransformerLayerNames[i]) + "', got '" +
                          layers[i].name + "'");
      }
    }
  } else {
    for (std::size_t i = 1; i < layers.size(); ++i) {
      if (layers[i].weights.cols != layers[i - 1].weights.rows) {
        throw ConfigError("assemble_model: chain dimension mismatch at layer '" +
                          layers[i].name + "'");
      }
    }
  }

  ToyModel m;
  m.config = config;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerState& ls = layers[i];
    AdapterState& as = adapters[i];
    ls.weights.validate();
    if (as.layer_name != ls.name) {
      throw ConfigError("assemble_model: adapter " + std::to_string(i) +
                        " names layer '" + as.layer_name + "', expected '" +
                        ls.name + "'");
    }
    if (as.rank == 0 || as.alpha <= 0.0f) {
      throw ConfigError("assemble_model: adapter for '" + ls.name +
                        "' has invalid rank or alpha");
    }
    if (as.a.rows() != ls.weights.rows || as.a.cols() != as.rank ||
        as.b.rows() != ls.weights.cols || as.b.cols() != as.rank) {
      throw ConfigError("assemble_model: adapter shapes for '" + ls.name +
                        "' do not match layer dims");
    }
    if (ls.bias.size() != ls.weights.rows) {
      throw ConfigError("assemble_model: bias length for '" + ls.name +
                        "' must equal d_out");
    }
    ModuLoraLayer layer;
    layer.name = ls.name;
    layer.weights =
        std::make_shared<const QuantizedMatrix>(std::move(ls.weights));
    layer.adapter.a = Variable::leaf(std::move(as.a), true);
    layer.adapter.b = Variable::leaf(std::move(as.b), true);
    layer.adapter.rank = as.rank;
    layer.adapter.alpha = static_cast<double>(as.alpha);
    DenseMatrix bias(1, ls.bias.size());
    for (std::size_t j = 0; j < ls.bias.size(); ++j) {
      bias(0, j) = static_cast<double>(ls.bias[j]);
    }
    layer.bias = Variable::leaf(std::move(bias), config.bias_trainable);
    layer.strategy = config.strategy;
    m.layers.push_back(std::move(layer));
  }
  return m;
}

std::vector<LayerState> extract_layer_states(const ToyModel& m) {
  std::vector<LayerState> out;
  out.reserve(m.layers.size());
  for (const ModuLoraLayer& layer : m.layers) {
    LayerState s;
    s.name = layer.name;
    s.weights = *layer.weights;
    s.bias.resize(layer.d_out());
    for (std::size_t j = 0; j < s.bias.size(); ++j) {
      s.bias[j] = static_cast<float>(layer.bias.value()(0, j));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<AdapterState> extract_adapter_states(const ToyModel& m) {
  std::vector<AdapterState> out;
  out.reserve(m.layers.size());
  for (const ModuLoraLayer& layer : m.layers) {
    AdapterState s;
    s.layer_name = layer.name;
    s.rank = layer.adapter.rank;
    s.alpha = static_cast<float>(layer.adapter.alpha);
    s.a = layer.adapter.a.value();
    s.b = layer.adapter.b.value();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace modulora
