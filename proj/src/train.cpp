// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "modulora/errors.hpp"
#include "modulora/svd.hpp"

namespace modulora {

LrSchedule parse_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::Constant;
  if (name == "cosine") return LrSchedule::Cosine;
  if (name == "linear") return LrSchedule::Linear;
  throw ConfigError("unknown schedule '" + std::string(name) +
                    "' (expected constant, cosine or linear)");
}

std::string_view schedule_name(LrSchedule s) {
  switch (s) {
    case LrSchedule::Constant: return "constant";
    case LrSchedule::Cosine: return "cosine";
    case LrSchedule::Linear: return "linear";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("train config: lr must be > 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("train config: warmup_ratio must be in [0, 1)");
  }
  if (batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
  if (weight_decay < 0.0) {
    throw ConfigError("train config: weight_decay must be >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train config: betas must be in [0, 1)");
  }
  if (eps <= 0.0) throw ConfigError("train config: eps must be > 0");
}

double lr_at(const TrainConfig& config, std::size_t step) {
  const auto warmup = static_cast<std::size_t>(
      config.warmup_ratio * static_cast<double>(config.steps));
  if (warmup > 0 && step < warmup) {
    return config.lr * static_cast<double>(step + 1) /
           static_cast<double>(warmup);
  }
  if (config.schedule == LrSchedule::Constant) return config.lr;
  const double span =
      std::max<double>(1.0, static_cast<double>(config.steps - warmup));
  const double p = static_cast<double>(step - warmup) / span;
  if (config.schedule == LrSchedule::Cosine) {
    constexpr double kPi = 3.14159265358979323846;
    return config.lr * 0.5 * (1.0 + std::cos(kPi * p));
  }
  return config.lr * (1.0 - p);
}

std::vector<std::size_t> train_batch_indices(std::uint64_t seed,
                                             std::size_t step, std::size_t n,
                                             std::size_t batch) {
  if (n == 0) throw ContractError("train_batch_indices: empty dataset");
  Rng rng(mix_seed(seed, step));
  std::vector<std::size_t> out(batch);
  for (std::size_t i = 0; i < batch; ++i) out[i] = rng.uniform_index(n);
  return out;
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

AdamW::AdamW(const TrainConfig& config)
    : AdamW(config.beta1, config.beta2, config.eps, config.weight_decay) {}

void AdamW::step(std::span<Variable> params,
                 std::span<const std::string> names, std::size_t step_index,
                 double lr) {
  if (params.size() != names.size()) {
    throw ContractError("adamw: params/names size mismatch");
  }
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Variable& p : params) {
      m_.emplace_back(p.rows(), p.cols());
      v_.emplace_back(p.rows(), p.cols());
    }
  } else if (m_.size() != params.size()) {
    throw ContractError("adamw: parameter list changed between steps");
  }

  const double t = static_cast<double>(step_index) + 1.0;
  const double bc1 = 1.0 - std::pow(beta1_, t);
  const double bc2 = 1.0 - std::pow(beta2_, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Variable& p = params[i];
    if (!p.requires_grad()) {
      throw ContractError("adamw: parameter '" + names[i] +
                          "' does not require grad");
    }
    if (!p.has_grad()) {
      throw ContractError("adamw: gradient missing for parameter '" +
                          names[i] + "'");
    }
    const DenseMatrix& g = p.grad();
    if (!g.all_finite()) {
      throw NumericError("adamw: non-finite gradient for parameter '" +
                         names[i] + "' at step " + std::to_string(step_index));
    }
    DenseMatrix value = p.value();
    DenseMatrix& m = m_[i];
    DenseMatrix& v = v_[i];
    auto vd = value.data();
    auto md = m.data();
    auto vv = v.data();
    auto gd = g.data();
    for (std::size_t j = 0; j < vd.size(); ++j) {
      md[j] = beta1_ * md[j] + (1.0 - beta1_) * gd[j];
      vv[j] = beta2_ * vv[j] + (1.0 - beta2_) * gd[j] * gd[j];
      const double mhat = md[j] / bc1;
      const double vhat = vv[j] / bc2;
      vd[j] = vd[j] * (1.0 - lr * weight_decay_) -
              lr * mhat / (std::sqrt(vhat) + eps_);
    }
    p.set_value(std::move(value));
  }
}

TrainReport train(ToyModel& model, const SyntheticTask& task,
                  const TrainConfig& config) {
  config.validate();
  TrainReport report;
  report.frozen_hash_before = model.frozen_state_hash();
  report.initial_eval = evaluate_model(model, task);

  std::vector<Variable> params = model.trainable_params();
  const std::vector<std::string> names = model.trainable_param_names();
  AdamW opt(config);
  MemoryLedger ledger;
  const std::size_t n = task.train_size();

  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::vector<std::size_t> indices =
        train_batch_indices(config.seed, step, n, config.batch_size);
    Tape tape;
    Variable loss = model_loss(tape, model, task, indices, &ledger);
    const double loss_value = loss.value()(0, 0);
    if (!std::isfinite(loss_value)) {
      report.diverged = true;
      break;
    }
    report.loss_curve.push_back(loss_value);
    for (Variable& p : params) p.zero_grad();
    backward(tape, loss);
    opt.step(params, names, step, lr_at(config, step));
    report.steps_completed = step + 1;
  }

  report.final_train_loss =
      report.loss_curve.empty() ? report.initial_eval.loss
                                : report.loss_curve.back();
  report.final_eval = evaluate_model(model, task);
  report.frozen_hash_after = model.frozen_state_hash();
  if (report.frozen_hash_before != report.frozen_hash_after) {
    throw ContractError("train: frozen base state changed during training");
  }
  report.peak_materialized_bytes = ledger.peak_bytes();
  return report;
}

BudgetReport bench_bit_budget(std::uint64_t seed, std::size_t steps) {
  BudgetReport report;
  report.seed = seed;
  report.steps = steps;

  TaskDims dims;  // 16 -> 16 planted-residual regression
  const SyntheticTask task =
      make_task(TaskKind::TeacherResidualRegression, seed, dims);
  const DenseMatrix& teacher = task.regression().teacher;

  struct Setting {
    int bits;
    std::size_t hidden;
  };
  // bits * hidden * (d_in + d_out) held (near-)constant: 1024 / 1024 / 960.
  const Setting settings[] = {{8, 4}, {4, 8}, {3, 10}};

  for (const Setting& s : settings) {
    const auto factors = truncated_factors(teacher, s.hidden);
    ModelConfig mc;
    mc.kind = ModelKind::Mlp;
    mc.task = TaskKind::TeacherResidualRegression;
    mc.task_dims = dims;
    mc.activation = "none";
    mc.quantizer = "rtn";
    mc.bits = s.bits;
    mc.group_size = 0;
    mc.rank = 2;
    mc.alpha = 8.0;
    mc.base_seed = seed;
    mc.adapter_seed = mix_seed(seed, 0xADB0 + s.hidden);

    // x -> [hidden x d_in] -> [d_out x hidden]
    BuiltModel built = build_chain_model(
        mc, {factors.second, factors.first}, {"fc1", "fc2"});

    TrainConfig tc;
    tc.steps = steps;
    tc.batch_size = 32;
    tc.lr = 1e-2;
    tc.seed = mix_seed(seed, static_cast<std::uint64_t>(s.bits));
    const TrainReport tr = train(built.model, task, tc);

    BudgetRow row;
    row.bits = s.bits;
    row.hidden = s.hidden;
    row.label = std::to_string(s.bits) + "-bit h=" + std::to_string(s.hidden);
    row.code_bits = static_cast<std::size_t>(s.bits) * s.hidden *
                    (dims.d_in + dims.d_out);
    row.frozen_mse = tr.initial_eval.metric;
    row.tuned_mse = tr.final_eval.metric;
    report.rows.push_back(std::move(row));
  }

  const auto best = std::min_element(
      report.rows.begin(), report.rows.end(),
      [](const BudgetRow& a, const BudgetRow& b) {
        return a.tuned_mse < b.tuned_mse;
      });
  report.direction = best->label +
                     " reached the lowest finetuned test MSE at this budget";
  return report;
}

}  // namespace modulora
