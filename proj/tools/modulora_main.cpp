// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface. Exit codes: 0 success; 1 I/O or file-format error;
// 2 configuration/usage error; 3 numeric error.
#include <cstdlib>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "modulora/checkpoint.hpp"
#include "modulora/errors.hpp"
#include "modulora/hash.hpp"
#include "modulora/train.hpp"

namespace {

using modulora::ConfigError;
using modulora::IoError;
using nlohmann::json;

constexpr int kReportSchemaVersion = 1;

std::uint64_t parse_env_seed(const char* text) {
  std::uint64_t value = 0;
  const char* end = text + std::string_view(text).size();
  const auto [ptr, ec] = std::from_chars(text, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(
        "MODULORA_SEED must be an unsigned integer, got '" +
        std::string(text) + "'");
  }
  return value;
}

// --seed beats MODULORA_SEED beats the default.
std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value) {
  if (opt != nullptr && opt->count() > 0) return flag_value;
  if (const char* env = std::getenv("MODULORA_SEED")) {
    return parse_env_seed(env);
  }
  return 1;
}

void emit(const std::string& body, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << body;
    if (!body.empty() && body.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write report: " + out_path);
  out << body;
  if (!body.empty() && body.back() != '\n') out << '\n';
  if (!out.good()) throw IoError("short write on report: " + out_path);
}

std::string hash_hex(std::uint64_t h) { return "0x" + modulora::hex_u64(h); }

modulora::SyntheticTask task_for_model(const modulora::ToyModel& model,
                                       const std::string& cache_path) {
  const modulora::ModelConfig& c = model.config;
  if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
    return modulora::load_dataset_jsonl(cache_path, c.task, c.task_dims);
  }
  modulora::SyntheticTask task =
      modulora::make_task(c.task, c.base_seed, c.task_dims);
  if (!cache_path.empty()) modulora::save_dataset_jsonl(task, cache_path);
  return task;
}

struct QuantizeOpts {
  std::string out;
  std::string task = "regression";
  int bits = 4;
  std::string quantizer = "rtn";
  std::size_t group_size = 0;
  std::size_t calib = 0;
  std::size_t rank = 8;
  double alpha = 32.0;
  std::string materialize = "weight";
  std::uint64_t seed = 1;
  std::string report = "text";
  std::string report_out;
};

void cmd_quantize(const QuantizeOpts& o, std::uint64_t seed) {
  modulora::ModelConfig mc;
  mc.task = modulora::parse_task(o.task);
  mc.kind = mc.task == modulora::TaskKind::TeacherResidualRegression
                ? modulora::ModelKind::Mlp
                : modulora::ModelKind::ParityTransformer;
  mc.bits = o.bits;
  mc.quantizer = o.quantizer;
  mc.group_size = o.group_size;
  mc.calib_samples = o.calib;
  mc.rank = o.rank;
  mc.alpha = o.alpha;
  mc.strategy = modulora::parse_strategy(o.materialize);
  mc.base_seed = seed;
  mc.adapter_seed = modulora::mix_seed(seed, 0xADA9);

  modulora::BuiltModel built = modulora::build_model(mc);
  modulora::save_model(built.model, o.out);

  json layers = json::array();
  std::size_t total_packed = 0;
  for (const modulora::LayerQuantReport& r : built.reports) {
    json l;
    l["name"] = r.name;
    l["rows"] = r.rows;
    l["cols"] = r.cols;
    l["bits"] = r.bits;
    l["group_size"] = r.group_size;
    l["packed_bytes"] = r.packed_bytes;
    if (r.has_proxy) l["proxy_loss"] = r.proxy;
    layers.push_back(std::move(l));
    total_packed += r.packed_bytes;
  }
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "quantize";
  j["out"] = o.out;
  j["task"] = o.task;
  j["quantizer"] = o.quantizer;
  j["bits"] = o.bits;
  j["seed"] = seed;
  j["layers"] = layers;
  j["total_packed_bytes"] = total_packed;
  j["checkpoint_bytes"] = std::filesystem::file_size(o.out);
  j["checkpoint_fnv1a64"] = hash_hex(modulora::fnv1a64_file(o.out));
  j["frozen_hash"] = hash_hex(built.model.frozen_state_hash());

  if (o.report == "json") {
    emit(j.dump(2), o.report_out);
    return;
  }
  std::ostringstream t;
  t << "quantized " << o.task << " model -> " << o.out << "\n";
  t << "quantizer " << o.quantizer << ", " << o.bits << "-bit, seed " << seed
    << "\n";
  for (const modulora::LayerQuantReport& r : built.reports) {
    t << "  " << r.name << "  " << r.rows << "x" << r.cols << "  " << r.bits
      << "-bit g=" << r.group_size << "  packed " << r.packed_bytes
      << " bytes";
    if (r.has_proxy) t << "  proxy_loss " << r.proxy;
    t << "\n";
  }
  t << "total packed: " << total_packed << " bytes, checkpoint: "
    << std::filesystem::file_size(o.out) << " bytes\n";
  t << "frozen hash: " << hash_hex(built.model.frozen_state_hash()) << "\n";
  emit(t.str(), o.report_out);
}

struct FinetuneOpts {
  std::string in;
  std::string out;
  std::size_t steps = 100;
  double lr = 1e-2;
  std::size_t batch_size = 32;
  double weight_decay = 0.0;
  std::string schedule = "constant";
  double warmup_ratio = 0.0;
  std::uint64_t seed = 1;
  std::string materialize;
  std::string report = "text";
  std::string report_out;
  std::string data_cache;
};

void cmd_finetune(const FinetuneOpts& o, std::uint64_t seed) {
  modulora::ToyModel model = modulora::load_model(o.in);
  if (!o.materialize.empty()) {
    model.set_strategy(modulora::parse_strategy(o.materialize));
  }
  const modulora::SyntheticTask task = task_for_model(model, o.data_cache);

  modulora::TrainConfig tc;
  tc.steps = o.steps;
  tc.batch_size = o.batch_size;
  tc.lr = o.lr;
  tc.weight_decay = o.weight_decay;
  tc.schedule = modulora::parse_schedule(o.schedule);
  tc.warmup_ratio = o.warmup_ratio;
  tc.seed = seed;

  const modulora::TrainReport tr = modulora::train(model, task, tc);
  modulora::save_model(model, o.out);

  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "finetune";
  j["in"] = o.in;
  j["out"] = o.out;
  j["task"] = std::string(modulora::task_name(model.config.task));
  j["strategy"] = std::string(modulora::strategy_name(model.config.strategy));
  j["steps"] = tc.steps;
  j["lr"] = tc.lr;
  j["batch_size"] = tc.batch_size;
  j["weight_decay"] = tc.weight_decay;
  j["schedule"] = o.schedule;
  j["warmup_ratio"] = tc.warmup_ratio;
  j["seed"] = seed;
  j["metric_name"] = tr.initial_eval.metric_name;
  j["baseline_metric"] = tr.initial_eval.metric;
  j["final_metric"] = tr.final_eval.metric;
  j["baseline_loss"] = tr.initial_eval.loss;
  j["final_eval_loss"] = tr.final_eval.loss;
  j["final_train_loss"] = tr.final_train_loss;
  j["loss_curve"] = tr.loss_curve;
  j["steps_completed"] = tr.steps_completed;
  j["diverged"] = tr.diverged;
  j["peak_materialized_bytes"] = tr.peak_materialized_bytes;
  j["frozen_hash_before"] = hash_hex(tr.frozen_hash_before);
  j["frozen_hash_after"] = hash_hex(tr.frozen_hash_after);
  if (tr.final_eval.metric > 0.0 &&
      tr.initial_eval.metric_name == "test_mse") {
    j["improvement_factor"] = tr.initial_eval.metric / tr.final_eval.metric;
  }

  if (o.report == "json") {
    emit(j.dump(2), o.report_out);
    return;
  }
  std::ostringstream t;
  t << "finetuned " << o.in << " -> " << o.out << " (" << tr.steps_completed
    << " steps" << (tr.diverged ? ", diverged" : "") << ")\n";
  t << tr.initial_eval.metric_name << ": baseline " << tr.initial_eval.metric
    << " -> final " << tr.final_eval.metric << "\n";
  t << "final train loss: " << tr.final_train_loss << "\n";
  t << "peak materialized bytes: " << tr.peak_materialized_bytes << "\n";
  t << "frozen hash: " << hash_hex(tr.frozen_hash_before) << " -> "
    << hash_hex(tr.frozen_hash_after) << "\n";
  emit(t.str(), o.report_out);
}

struct EvalOpts {
  std::string in;
  std::string report = "text";
  std::string report_out;
  std::string data_cache;
};

void cmd_eval(const EvalOpts& o) {
  modulora::ToyModel model = modulora::load_model(o.in);
  const modulora::SyntheticTask task = task_for_model(model, o.data_cache);
  const modulora::EvalResult e = modulora::evaluate_model(model, task);

  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "eval";
  j["in"] = o.in;
  j["task"] = std::string(modulora::task_name(model.config.task));
  j["metric_name"] = e.metric_name;
  j["metric"] = e.metric;
  j["loss"] = e.loss;
  j["frozen_hash"] = hash_hex(model.frozen_state_hash());

  if (o.report == "json") {
    emit(j.dump(2), o.report_out);
    return;
  }
  std::ostringstream t;
  t << e.metric_name << ": " << e.metric << "\n";
  t << "eval loss: " << e.loss << "\n";
  t << "frozen hash: " << hash_hex(model.frozen_state_hash()) << "\n";
  emit(t.str(), o.report_out);
}

struct InspectOpts {
  std::string in;
  std::string report = "text";
  std::string report_out;
};

void cmd_inspect(const InspectOpts& o) {
  const modulora::CheckpointLayout layout = modulora::inspect_layout(o.in);
  modulora::ToyModel model = modulora::load_model(o.in);

  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "inspect";
  j["in"] = o.in;
  j["version"] = layout.version;
  j["file_size"] = layout.file_size;
  j["config"] = json::parse(modulora::model_config_to_json(model.config));
  j["config_offset"] = layout.config_offset;
  j["config_len"] = layout.config_len;
  j["layer_section_offset"] = layout.layer_section_offset;
  j["adapter_section_offset"] = layout.adapter_section_offset;
  json layers = json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const modulora::ModuLoraLayer& l = model.layers[i];
    json e;
    e["name"] = l.name;
    e["rows"] = l.d_out();
    e["cols"] = l.d_in();
    e["bits"] = l.weights->bits;
    e["group_size"] = l.weights->group_size;
    e["packed_bytes"] = l.weights->packed_bytes();
    e["rank"] = l.adapter.rank;
    e["alpha"] = l.adapter.alpha;
    e["offset"] = layout.layers[i].offset;
    e["size"] = layout.layers[i].size;
    e["adapter_offset"] = layout.adapters[i].offset;
    e["adapter_size"] = layout.adapters[i].size;
    layers.push_back(std::move(e));
  }
  j["layers"] = layers;
  j["frozen_hash"] = hash_hex(model.frozen_state_hash());
  j["checkpoint_fnv1a64"] = hash_hex(modulora::fnv1a64_file(o.in));

  if (o.report == "json") {
    emit(j.dump(2), o.report_out);
    return;
  }
  std::ostringstream t;
  t << o.in << ": format v" << layout.version << ", " << layout.file_size
    << " bytes, " << model.layers.size() << " layers\n";
  t << "config at " << layout.config_offset << " (+" << layout.config_len
    << "), layers at " << layout.layer_section_offset << ", adapters at "
    << layout.adapter_section_offset << "\n";
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const modulora::ModuLoraLayer& l = model.layers[i];
    t << "  " << l.name << "  " << l.d_out() << "x" << l.d_in() << "  "
      << l.weights->bits << "-bit g=" << l.weights->group_size << "  rank "
      << l.adapter.rank << " alpha " << l.adapter.alpha << "\n";
  }
  t << "frozen hash: " << hash_hex(model.frozen_state_hash()) << "\n";
  emit(t.str(), o.report_out);
}

struct BenchMemoryOpts {
  std::string in;
  std::size_t batch = 8;
  std::string report = "text";
  std::string report_out;
  std::string data_cache;
};

void cmd_bench_memory(const BenchMemoryOpts& o) {
  modulora::ToyModel model = modulora::load_model(o.in);
  const modulora::SyntheticTask task = task_for_model(model, o.data_cache);

  std::vector<modulora::LayerDims> dims;
  for (const modulora::ModuLoraLayer& l : model.layers) {
    dims.push_back({l.name, l.d_out(), l.d_in()});
  }
  const std::size_t n = task.train_size();
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < o.batch && i < n; ++i) indices.push_back(i);

  const modulora::MaterializationStrategy strategies[] = {
      modulora::MaterializationStrategy::WeightMaterialize,
      modulora::MaterializationStrategy::RowMaterialize,
      modulora::MaterializationStrategy::QuantizerMatvec};

  json rows = json::array();
  std::ostringstream t;
  t << "memory bench on " << o.in << " (" << model.layers.size()
    << " layers, batch " << indices.size() << ")\n";
  for (const auto s : strategies) {
    model.set_strategy(s);
    modulora::MemoryLedger ledger;
    std::vector<modulora::Variable> params = model.trainable_params();
    modulora::Tape tape;
    modulora::Variable loss =
        modulora::model_loss(tape, model, task, indices, &ledger);
    for (modulora::Variable& p : params) p.zero_grad();
    modulora::backward(tape, loss);

    const modulora::LedgerReport lr =
        modulora::ledger_assert_single_materialization(ledger, dims, s);
    if (!lr.passed) {
      std::string msg =
          "memory invariant violated under " +
          std::string(modulora::strategy_name(s)) + ":";
      for (const std::string& v : lr.violations) msg += "\n  " + v;
      throw modulora::ContractError(msg);
    }
    json row;
    row["strategy"] = std::string(modulora::strategy_name(s));
    row["peak_bytes"] = lr.observed_peak;
    row["expected_peak_bytes"] = lr.expected_peak;
    row["sum_of_layer_bytes"] = lr.sum_of_layers;
    row["peak_equals_sum"] =
        lr.sum_of_layers != 0 && lr.observed_peak == lr.sum_of_layers;
    rows.push_back(std::move(row));
    t << "  " << modulora::strategy_name(s) << ": peak " << lr.observed_peak
      << " bytes (expected " << lr.expected_peak << ", sum over layers "
      << lr.sum_of_layers << ")\n";
    if (model.layers.size() > 1 &&
        s != modulora::MaterializationStrategy::QuantizerMatvec) {
      t << "    peak != sum over layers: "
        << (lr.observed_peak != lr.sum_of_layers ? "ok" : "VIOLATED") << "\n";
    }
  }

  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "bench-memory";
  j["in"] = o.in;
  j["batch"] = indices.size();
  j["rows"] = rows;
  emit(o.report == "json" ? j.dump(2) : t.str(), o.report_out);
}

struct BenchBudgetOpts {
  std::uint64_t seed = 1;
  std::size_t steps = 150;
  std::string report = "text";
  std::string report_out;
};

void cmd_bench_budget(const BenchBudgetOpts& o, std::uint64_t seed) {
  const modulora::BudgetReport br = modulora::bench_bit_budget(seed, o.steps);

  json rows = json::array();
  for (const modulora::BudgetRow& r : br.rows) {
    json row;
    row["label"] = r.label;
    row["bits"] = r.bits;
    row["hidden"] = r.hidden;
    row["code_bits"] = r.code_bits;
    row["frozen_mse"] = r.frozen_mse;
    row["tuned_mse"] = r.tuned_mse;
    rows.push_back(std::move(row));
  }
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "bench-budget";
  j["seed"] = br.seed;
  j["steps"] = br.steps;
  j["rows"] = rows;
  j["direction"] = br.direction;

  if (o.report == "json") {
    emit(j.dump(2), o.report_out);
    return;
  }
  std::ostringstream t;
  t << "fixed bit budget comparison (seed " << br.seed << ", " << br.steps
    << " steps)\n";
  for (const modulora::BudgetRow& r : br.rows) {
    t << "  " << r.label << "  code bits " << r.code_bits << "  frozen MSE "
      << r.frozen_mse << "  tuned MSE " << r.tuned_mse << "\n";
  }
  t << br.direction << "\n";
  emit(t.str(), o.report_out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "low-rank adapter finetuning over bit-packed quantized weights"};
  app.require_subcommand(1);

  const std::vector<std::string> report_modes = {"text", "json"};
  const std::vector<std::string> strategies = {"weight", "row", "matvec"};

  QuantizeOpts q;
  CLI::App* quantize = app.add_subcommand(
      "quantize", "build and quantize a seeded synthetic model");
  quantize->add_option("--out", q.out, "output checkpoint path")->required();
  quantize->add_option("--task", q.task, "regression | parity")
      ->check(CLI::IsMember({"regression", "parity"}));
  quantize->add_option("--bits", q.bits, "bit width")
      ->check(CLI::IsMember({2, 3, 4, 8}));
  quantize->add_option("--quantizer", q.quantizer, "rtn | optq")
      ->check(CLI::IsMember({"rtn", "optq"}));
  quantize->add_option("--group-size", q.group_size,
                       "quantization group size (0 = per row)");
  quantize->add_option("--calib", q.calib,
                       "calibration sample count (required for optq)");
  quantize->add_option("--rank", q.rank, "adapter rank");
  quantize->add_option("--alpha", q.alpha, "adapter alpha");
  quantize->add_option("--materialize", q.materialize, "weight | row | matvec")
      ->check(CLI::IsMember(strategies));
  const CLI::Option* q_seed = quantize->add_option("--seed", q.seed);
  quantize->add_option("--report", q.report)->check(CLI::IsMember(report_modes));
  quantize->add_option("--report-out", q.report_out, "write report to file");

  FinetuneOpts f;
  CLI::App* finetune =
      app.add_subcommand("finetune", "train adapters on the model's task");
  finetune->add_option("--in", f.in, "input checkpoint")->required();
  finetune->add_option("--out", f.out, "output checkpoint")->required();
  finetune->add_option("--steps", f.steps);
  finetune->add_option("--lr", f.lr);
  finetune->add_option("--batch-size", f.batch_size);
  finetune->add_option("--weight-decay", f.weight_decay);
  finetune->add_option("--schedule", f.schedule)
      ->check(CLI::IsMember({"constant", "cosine", "linear"}));
  finetune->add_option("--warmup-ratio", f.warmup_ratio);
  const CLI::Option* f_seed = finetune->add_option("--seed", f.seed);
  finetune->add_option("--materialize", f.materialize)
      ->check(CLI::IsMember(strategies));
  finetune->add_option("--report", f.report)->check(CLI::IsMember(report_modes));
  finetune->add_option("--report-out", f.report_out);
  finetune->add_option("--data-cache", f.data_cache,
                       "JSONL dataset cache (read if present, else written)");

  EvalOpts e;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on its task");
  eval_cmd->add_option("--in", e.in, "input checkpoint")->required();
  eval_cmd->add_option("--report", e.report)->check(CLI::IsMember(report_modes));
  eval_cmd->add_option("--report-out", e.report_out);
  eval_cmd->add_option("--data-cache", e.data_cache);

  InspectOpts ins;
  CLI::App* inspect =
      app.add_subcommand("inspect", "print checkpoint layout and hashes");
  inspect->add_option("--in", ins.in, "input checkpoint")->required();
  inspect->add_option("--report", ins.report)
      ->check(CLI::IsMember(report_modes));
  inspect->add_option("--report-out", ins.report_out);

  BenchMemoryOpts bm;
  CLI::App* bench_memory = app.add_subcommand(
      "bench-memory", "peak materialized bytes per strategy");
  bench_memory->add_option("--in", bm.in, "input checkpoint")->required();
  bench_memory->add_option("--batch", bm.batch, "examples per pass");
  bench_memory->add_option("--report", bm.report)
      ->check(CLI::IsMember(report_modes));
  bench_memory->add_option("--report-out", bm.report_out);
  bench_memory->add_option("--data-cache", bm.data_cache);

  BenchBudgetOpts bb;
  CLI::App* bench_budget = app.add_subcommand(
      "bench-budget", "fixed-bit-budget model comparison");
  const CLI::Option* bb_seed = bench_budget->add_option("--seed", bb.seed);
  bench_budget->add_option("--steps", bb.steps);
  bench_budget->add_option("--report", bb.report)
      ->check(CLI::IsMember(report_modes));
  bench_budget->add_option("--report-out", bb.report_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (app.got_subcommand(quantize)) {
      cmd_quantize(q, resolve_seed(q_seed, q.seed));
    } else if (app.got_subcommand(finetune)) {
      cmd_finetune(f, resolve_seed(f_seed, f.seed));
    } else if (app.got_subcommand(eval_cmd)) {
      cmd_eval(e);
    } else if (app.got_subcommand(inspect)) {
      cmd_inspect(ins);
    } else if (app.got_subcommand(bench_memory)) {
      cmd_bench_memory(bm);
    } else if (app.got_subcommand(bench_budget)) {
      cmd_bench_budget(bb, resolve_seed(bb_seed, bb.seed));
    }
  } catch (const modulora::FormatError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const modulora::IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const modulora::NumericError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  } catch (const modulora::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << "\n";
    return 3;
  }
  return 0;
}
