// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint format, little-endian throughout:
//
//   "MLRA"                                magic, 4 bytes
//   u16  version                          currently 1
//   u32  config_len, config JSON bytes    ModelConfig, stable key order
//   u32  n_layers
//   per layer:
//     u32 name_len, name bytes
//     u32 rows, u32 cols, u8 bits, u32 group_size
//     u32 n_words, n_words x u32          packed codes (bitpack layout)
//     rows*(cols/group_size) x f32        scales
//     rows*(cols/group_size) x f32        zeros
//     u32 bias_len, bias_len x f32        bias (length d_out)
//   u32  n_adapters                       == n_layers, same order
//   per adapter:
//     u32 name_len, name bytes            owning layer
//     u32 r, f32 alpha
//     rows*r x f64                        A, row-major
//     cols*r x f64                        B, row-major
//
// save(load(x)) is byte-identical; quantized state and adapters roundtrip
// bit-exactly (biases are stored in f32).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modulora/model.hpp"

namespace modulora {

inline constexpr char kCheckpointMagic[4] = {'M', 'L', 'R', 'A'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_model(const ToyModel& model, const std::string& path);

// Throws FormatError (BadMagic / BadVersion / Truncated / BadField, with the
// byte offset) on malformed files, IoError when the file cannot be read.
ToyModel load_model(const std::string& path);

// Byte map of a checkpoint without constructing the model. Used by the
// inspect command and by tests that assert a finetune run only rewrites the
// adapter section.
struct CheckpointLayout {
  std::uint16_t version = 0;
  std::size_t file_size = 0;
  std::size_t config_offset = 0;  // of the JSON bytes
  std::size_t config_len = 0;
  std::size_t layer_section_offset = 0;    // of u32 n_layers
  std::size_t adapter_section_offset = 0;  // of u32 n_adapters

  struct Record {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
  };
  std::vector<Record> layers;
  std::vector<Record> adapters;
};

CheckpointLayout inspect_layout(const std::string& path);

}  // namespace modulora
