// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/tasks.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "modulora/errors.hpp"

namespace modulora {

using nlohmann::json;

TaskKind parse_task(std::string_view name) {
  if (name == "regression") return TaskKind::TeacherResidualRegression;
  if (name == "parity") return TaskKind::SequenceParityClassification;
  throw ConfigError("unknown task '" + std::string(name) +
                    "' (expected regression or parity)");
}

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::TeacherResidualRegression: return "regression";
    case TaskKind::SequenceParityClassification: return "parity";
  }
  return "?";
}

const RegressionData& SyntheticTask::regression() const {
  if (kind != TaskKind::TeacherResidualRegression) {
    throw ContractError("task: not a regression task");
  }
  return std::get<RegressionData>(data);
}

RegressionData& SyntheticTask::regression() {
  if (kind != TaskKind::TeacherResidualRegression) {
    throw ContractError("task: not a regression task");
  }
  return std::get<RegressionData>(data);
}

const ParityData& SyntheticTask::parity() const {
  if (kind != TaskKind::SequenceParityClassification) {
    throw ContractError("task: not a parity task");
  }
  return std::get<ParityData>(data);
}

ParityData& SyntheticTask::parity() {
  if (kind != TaskKind::SequenceParityClassification) {
    throw ContractError("task: not a parity task");
  }
  return std::get<ParityData>(data);
}

std::size_t SyntheticTask::train_size() const {
  return kind == TaskKind::TeacherResidualRegression
             ? regression().x_train.rows()
             : parity().x_train.size();
}

std::size_t SyntheticTask::test_size() const {
  return kind == TaskKind::TeacherResidualRegression
             ? regression().x_test.rows()
             : parity().x_test.size();
}

namespace {

SyntheticTask make_regression(std::uint64_t seed, TaskDims dims) {
  SyntheticTask task;
  task.kind = TaskKind::TeacherResidualRegression;
  task.seed = seed;
  task.dims = dims;

  Rng rng(mix_seed(seed, 0x7EAC));
  RegressionData d;
  d.teacher = DenseMatrix::gaussian(dims.d_out, dims.d_in, rng);
  d.residual = DenseMatrix(dims.d_out, dims.d_in);
  for (std::size_t k = 0; k < dims.planted_rank; ++k) {
    const DenseMatrix u = DenseMatrix::gaussian(dims.d_out, 1, rng);
    const DenseMatrix v = DenseMatrix::gaussian(dims.d_in, 1, rng);
    for (std::size_t i = 0; i < dims.d_out; ++i) {
      for (std::size_t j = 0; j < dims.d_in; ++j) {
        d.residual(i, j) += dims.residual_scale * u(i, 0) * v(j, 0);
      }
    }
  }
  const DenseMatrix effective = add(d.teacher, d.residual);
  Rng data_rng(mix_seed(seed, 0xDA7A));
  d.x_train = DenseMatrix::gaussian(dims.n_train, dims.d_in, data_rng);
  d.x_test = DenseMatrix::gaussian(dims.n_test, dims.d_in, data_rng);
  d.y_train = matmul(d.x_train, transpose(effective));
  d.y_test = matmul(d.x_test, transpose(effective));
  task.data = std::move(d);
  return task;
}

SyntheticTask make_parity(std::uint64_t seed, TaskDims dims) {
  if (dims.n_marked == 0 || dims.n_marked > dims.seq_len) {
    throw ConfigError("parity task: marked subset size must be in [1, T]");
  }
  SyntheticTask task;
  task.kind = TaskKind::SequenceParityClassification;
  task.seed = seed;
  task.dims = dims;

  Rng rng(mix_seed(seed, 0x9A41));
  ParityData d;
  // Fixed marked subset: draw without replacement.
  std::vector<std::size_t> pool(dims.seq_len);
  for (std::size_t i = 0; i < dims.seq_len; ++i) pool[i] = i;
  for (std::size_t k = 0; k < dims.n_marked; ++k) {
    const std::size_t pick = k + rng.uniform_index(pool.size() - k);
    std::swap(pool[k], pool[pick]);
    d.marked.push_back(pool[k]);
  }
  // Token embeddings for bit 0/1 and additive positional codes.
  const DenseMatrix emb = DenseMatrix::gaussian(2, dims.d_model, rng);
  const DenseMatrix pos =
      DenseMatrix::gaussian(dims.seq_len, dims.d_model, rng, 0.0, 0.5);

  auto gen_split = [&](std::size_t n, std::vector<DenseMatrix>& xs,
                       std::vector<int>& ys) {
    xs.reserve(n);
    ys.reserve(n);
    for (std::size_t e = 0; e < n; ++e) {
      DenseMatrix x(dims.seq_len, dims.d_model);
      int parity = 0;
      for (std::size_t t = 0; t < dims.seq_len; ++t) {
        const std::size_t bit = rng.uniform_index(2);
        for (std::size_t j = 0; j < dims.d_model; ++j) {
          x(t, j) = emb(bit, j) + pos(t, j);
        }
        for (std::size_t m : d.marked) {
          if (m == t) parity ^= static_cast<int>(bit);
        }
      }
      xs.push_back(std::move(x));
      ys.push_back(parity);
    }
  };
  gen_split(dims.n_train, d.x_train, d.y_train);
  gen_split(dims.n_test, d.x_test, d.y_test);
  task.data = std::move(d);
  return task;
}

}  // namespace

SyntheticTask make_task(TaskKind kind, std::uint64_t seed, TaskDims dims) {
  switch (kind) {
    case TaskKind::TeacherResidualRegression:
      return make_regression(seed, dims);
    case TaskKind::SequenceParityClassification:
      return make_parity(seed, dims);
  }
  throw ConfigError("make_task: bad kind");
}

SyntheticTask make_regression_task_from_teacher(const DenseMatrix& teacher,
                                                const DenseMatrix& residual,
                                                std::uint64_t seed,
                                                std::size_t n_train,
                                                std::size_t n_test) {
  if (!teacher.same_shape(residual)) {
    throw DimensionError("task: teacher and residual shapes differ");
  }
  SyntheticTask task;
  task.kind = TaskKind::TeacherResidualRegression;
  task.seed = seed;
  task.dims.d_out = teacher.rows();
  task.dims.d_in = teacher.cols();
  task.dims.n_train = n_train;
  task.dims.n_test = n_test;
  RegressionData d;
  d.teacher = teacher;
  d.residual = residual;
  const DenseMatrix effective = add(teacher, residual);
  Rng data_rng(mix_seed(seed, 0xDA7A));
  d.x_train = DenseMatrix::gaussian(n_train, teacher.cols(), data_rng);
  d.x_test = DenseMatrix::gaussian(n_test, teacher.cols(), data_rng);
  d.y_train = matmul(d.x_train, transpose(effective));
  d.y_test = matmul(d.x_test, transpose(effective));
  task.data = std::move(d);
  return task;
}

DenseMatrix correlated_gaussian(std::size_t rows, std::size_t cols, double rho,
                                Rng& rng) {
  if (!(rho > -1.0 && rho < 1.0)) {
    throw ConfigError("correlated_gaussian: rho must be in (-1, 1)");
  }
  DenseMatrix x(rows, cols);
  const double fresh = std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 0; i < rows; ++i) {
    double prev = rng.gaussian();
    x(i, 0) = prev;
    for (std::size_t j = 1; j < cols; ++j) {
      prev = rho * prev + fresh * rng.gaussian();
      x(i, j) = prev;
    }
  }
  return x;
}

namespace {

json matrix_to_flat(const DenseMatrix& m) {
  json arr = json::array();
  for (double v : m.data()) arr.push_back(v);
  return arr;
}

}  // namespace

void save_dataset_jsonl(const SyntheticTask& task, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset cache: " + path);
  auto write_line = [&](const char* split, const json& x, const json& y) {
    json line;
    line["split"] = split;
    line["x"] = x;
    line["y"] = y;
    out << line.dump() << "\n";
  };
  if (task.kind == TaskKind::TeacherResidualRegression) {
    const RegressionData& d = task.regression();
    for (std::size_t i = 0; i < d.x_train.rows(); ++i) {
      json x = json::array(), y = json::array();
      for (double v : d.x_train.row(i)) x.push_back(v);
      for (double v : d.y_train.row(i)) y.push_back(v);
      write_line("train", x, y);
    }
    for (std::size_t i = 0; i < d.x_test.rows(); ++i) {
      json x = json::array(), y = json::array();
      for (double v : d.x_test.row(i)) x.push_back(v);
      for (double v : d.y_test.row(i)) y.push_back(v);
      write_line("test", x, y);
    }
  } else {
    const ParityData& d = task.parity();
    for (std::size_t i = 0; i < d.x_train.size(); ++i) {
      write_line("train", matrix_to_flat(d.x_train[i]), d.y_train[i]);
    }
    for (std::size_t i = 0; i < d.x_test.size(); ++i) {
      write_line("test", matrix_to_flat(d.x_test[i]), d.y_test[i]);
    }
  }
  if (!out.good()) throw IoError("short write on dataset cache: " + path);
}

SyntheticTask load_dataset_jsonl(const std::string& path, TaskKind kind,
                                 TaskDims dims) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset cache: " + path);

  SyntheticTask task;
  task.kind = kind;
  task.dims = dims;

  std::vector<std::vector<double>> xs_train, xs_test;
  std::vector<json> ys_train, ys_test;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json entry;
    try {
      entry = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(FormatError::Kind::BadField, lineno,
                        "dataset cache line " + std::to_string(lineno) +
                            ": " + e.what());
    }
    if (!entry.contains("split") || !entry.contains("x") ||
        !entry.contains("y")) {
      throw FormatError(FormatError::Kind::BadField, lineno,
                        "dataset cache line " + std::to_string(lineno) +
                            ": missing split/x/y");
    }
    const std::string split = entry["split"].get<std::string>();
    std::vector<double> x;
    for (const auto& v : entry["x"]) x.push_back(v.get<double>());
    if (split == "train") {
      xs_train.push_back(std::move(x));
      ys_train.push_back(entry["y"]);
    } else if (split == "test") {
      xs_test.push_back(std::move(x));
      ys_test.push_back(entry["y"]);
    } else {
      throw FormatError(FormatError::Kind::BadField, lineno,
                        "dataset cache line " + std::to_string(lineno) +
                            ": bad split '" + split + "'");
    }
  }

  auto build_matrix = [](const std::vector<std::vector<double>>& rows,
                         std::size_t cols, const char* what) {
    DenseMatrix m(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != cols) {
        throw FormatError(FormatError::Kind::BadField, i,
                          std::string("dataset cache: ragged ") + what);
      }
      for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
    }
    return m;
  };

  if (kind == TaskKind::TeacherResidualRegression) {
    RegressionData d;
    d.x_train = build_matrix(xs_train, dims.d_in, "train x");
    d.x_test = build_matrix(xs_test, dims.d_in, "test x");
    auto build_targets = [&](const std::vector<json>& ys, const char* what) {
      DenseMatrix y(ys.size(), dims.d_out);
      for (std::size_t i = 0; i < ys.size(); ++i) {
        for (std::size_t j = 0; j < dims.d_out; ++j) {
          try {
            y(i, j) = ys[i].at(j).get<double>();
          } catch (const json::exception& e) {
            throw FormatError(FormatError::Kind::BadField, i,
                              std::string("dataset cache: bad ") + what +
                                  " y: " + e.what());
          }
        }
      }
      return y;
    };
    d.y_train = build_targets(ys_train, "train");
    d.y_test = build_targets(ys_test, "test");
    task.data = std::move(d);
  } else {
    ParityData d;
    const std::size_t want = dims.seq_len * dims.d_model;
    auto check = [&](const std::vector<double>& x) {
      if (x.size() != want) {
        throw FormatError(FormatError::Kind::BadField, 0,
                          "dataset cache: sequence x has " +
                              std::to_string(x.size()) + " values, expected " +
                              std::to_string(want));
      }
    };
    for (auto& x : xs_train) {
      check(x);
      d.x_train.push_back(
          DenseMatrix(dims.seq_len, dims.d_model, std::move(x)));
    }
    for (auto& x : xs_test) {
      check(x);
      d.x_test.push_back(DenseMatrix(dims.seq_len, dims.d_model, std::move(x)));
    }
    auto to_label = [](const json& y) {
      int v = 0;
      try {
        v = y.get<int>();
      } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::BadField, 0,
                          std::string("dataset cache: bad label: ") + e.what());
      }
      if (v != 0 && v != 1) {
        throw FormatError(FormatError::Kind::BadField, 0,
                          "dataset cache: label must be 0 or 1, got " +
                              std::to_string(v));
      }
      return v;
    };
    for (const json& y : ys_train) d.y_train.push_back(to_label(y));
    for (const json& y : ys_test) d.y_test.push_back(to_label(y));
    task.data = std::move(d);
  }
  return task;
}

}  // namespace modulora
