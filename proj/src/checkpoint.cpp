// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <utility>

#include "modulora/errors.hpp"

namespace modulora {

namespace {

using Bytes = std::vector<std::uint8_t>;

void put_u8(Bytes& b, std::uint8_t v) { b.push_back(v); }

void put_u16(Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xFF));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void put_u64(Bytes& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void put_f32(Bytes& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }
void put_f64(Bytes& b, double v) {
  put_u64(b, std::bit_cast<std::uint64_t>(v));
}

void put_str(Bytes& b, const std::string& s) {
  put_u32(b, static_cast<std::uint32_t>(s.size()));
  b.insert(b.end(), s.begin(), s.end());
}

struct Reader {
  const Bytes& buf;
  std::size_t off = 0;

  void need(std::size_t n, const char* what) {
    if (off + n > buf.size()) {
      throw FormatError(FormatError::Kind::Truncated, off,
                        std::string("checkpoint: truncated while reading ") +
                            what + " at offset " + std::to_string(off));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return buf[off++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(buf[off]) |
                      static_cast<std::uint16_t>(buf[off + 1]) << 8;
    off += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(buf[off + i]) << (8 * i);
    }
    off += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(buf[off + i]) << (8 * i);
    }
    off += 8;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const std::uint32_t len = u32(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + off), len);
    off += len;
    return s;
  }
};

Bytes encode(const ToyModel& model) {
  const std::vector<LayerState> layers = extract_layer_states(model);
  const std::vector<AdapterState> adapters = extract_adapter_states(model);

  Bytes b;
  b.insert(b.end(), kCheckpointMagic, kCheckpointMagic + 4);
  put_u16(b, kCheckpointVersion);
  put_str(b, model_config_to_json(model.config));

  put_u32(b, static_cast<std::uint32_t>(layers.size()));
  for (const LayerState& s : layers) {
    put_str(b, s.name);
    put_u32(b, static_cast<std::uint32_t>(s.weights.rows));
    put_u32(b, static_cast<std::uint32_t>(s.weights.cols));
    put_u8(b, static_cast<std::uint8_t>(s.weights.bits));
    put_u32(b, static_cast<std::uint32_t>(s.weights.group_size));
    put_u32(b, static_cast<std::uint32_t>(s.weights.codes.words.size()));
    for (std::uint32_t w : s.weights.codes.words) put_u32(b, w);
    for (float v : s.weights.scales) put_f32(b, v);
    for (float v : s.weights.zeros) put_f32(b, v);
    put_u32(b, static_cast<std::uint32_t>(s.bias.size()));
    for (float v : s.bias) put_f32(b, v);
  }

  put_u32(b, static_cast<std::uint32_t>(adapters.size()));
  for (const AdapterState& a : adapters) {
    put_str(b, a.layer_name);
    put_u32(b, static_cast<std::uint32_t>(a.rank));
    put_f32(b, a.alpha);
    for (double v : a.a.data()) put_f64(b, v);
    for (double v : a.b.data()) put_f64(b, v);
  }
  return b;
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  Bytes buf((std::istreambuf_iterator<char>(in)),
            std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on checkpoint: " + path);
  return buf;
}

struct ParsedCheckpoint {
  std::string config_json;
  std::vector<LayerState> layers;
  std::vector<AdapterState> adapters;
  CheckpointLayout layout;
};

[[noreturn]] void bad_field(std::size_t off, const std::string& msg) {
  throw FormatError(FormatError::Kind::BadField, off,
                    "checkpoint: " + msg + " at offset " + std::to_string(off));
}

ParsedCheckpoint parse(const Bytes& buf) {
  ParsedCheckpoint out;
  Reader r{buf};

  r.need(4, "magic");
  if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::BadMagic, 0,
                      "checkpoint: bad magic (expected MLRA)");
  }
  r.off = 4;
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::BadVersion, 4,
                      "checkpoint: unsupported format version " +
                          std::to_string(version));
  }
  out.layout.version = version;
  out.layout.file_size = buf.size();

  {
    const std::size_t len_off = r.off;
    const std::uint32_t config_len = r.u32("config length");
    r.need(config_len, "config JSON");
    out.layout.config_offset = len_off + 4;
    out.layout.config_len = config_len;
    out.config_json.assign(
        reinterpret_cast<const char*>(buf.data() + r.off), config_len);
    r.off += config_len;
  }

  out.layout.layer_section_offset = r.off;
  const std::uint32_t n_layers = r.u32("layer count");
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const std::size_t record_off = r.off;
    LayerState s;
    s.name = r.str("layer name");
    s.weights.rows = r.u32("rows");
    s.weights.cols = r.u32("cols");
    const std::size_t bits_off = r.off;
    s.weights.bits = static_cast<int>(r.u8("bits"));
    const std::size_t group_off = r.off;
    s.weights.group_size = r.u32("group size");

    if (!is_supported_bit_width(s.weights.bits)) {
      bad_field(bits_off, "unsupported bit width " +
                              std::to_string(s.weights.bits) + " in layer '" +
                              s.name + "'");
    }
    if (s.weights.rows == 0 || s.weights.cols == 0) {
      bad_field(record_off, "layer '" + s.name + "' has a zero dimension");
    }
    if (s.weights.group_size == 0 ||
        s.weights.cols % s.weights.group_size != 0) {
      bad_field(group_off, "group size " +
                               std::to_string(s.weights.group_size) +
                               " does not divide cols in layer '" + s.name +
                               "'");
    }

    const std::size_t count = s.weights.rows * s.weights.cols;
    const std::size_t words_off = r.off;
    const std::uint32_t n_words = r.u32("word count");
    if (n_words != packed_word_count(count, s.weights.bits)) {
      bad_field(words_off, "packed word count " + std::to_string(n_words) +
                               " does not match " + std::to_string(count) +
                               " codes in layer '" + s.name + "'");
    }
    s.weights.codes.bits = s.weights.bits;
    s.weights.codes.count = count;
    s.weights.codes.words.resize(n_words);
    for (std::uint32_t w = 0; w < n_words; ++w) {
      s.weights.codes.words[w] = r.u32("packed words");
    }
    if (n_words > 0) {
      const std::size_t used =
          count * static_cast<std::size_t>(s.weights.bits) -
          (static_cast<std::size_t>(n_words) - 1) * 32;
      if (used < 32 && (s.weights.codes.words.back() >> used) != 0) {
        bad_field(words_off,
                  "nonzero trailing bits in packed words of layer '" + s.name +
                      "'");
      }
    }

    const std::size_t n_grids =
        s.weights.rows * (s.weights.cols / s.weights.group_size);
    s.weights.scales.resize(n_grids);
    for (std::size_t g = 0; g < n_grids; ++g) {
      s.weights.scales[g] = r.f32("scales");
    }
    s.weights.zeros.resize(n_grids);
    for (std::size_t g = 0; g < n_grids; ++g) {
      s.weights.zeros[g] = r.f32("zeros");
    }
    const std::size_t bias_off = r.off;
    const std::uint32_t bias_len = r.u32("bias length");
    if (bias_len != s.weights.rows) {
      bad_field(bias_off, "bias length " + std::to_string(bias_len) +
                              " != rows in layer '" + s.name + "'");
    }
    s.bias.resize(bias_len);
    for (std::uint32_t j = 0; j < bias_len; ++j) s.bias[j] = r.f32("bias");

    try {
      s.weights.validate();
    } catch (const Error& e) {
      bad_field(record_off,
                "layer '" + s.name + "' failed validation: " + e.what());
    }

    out.layout.layers.push_back(
        {s.name, record_off, r.off - record_off});
    out.layers.push_back(std::move(s));
  }

  out.layout.adapter_section_offset = r.off;
  const std::uint32_t n_adapters = r.u32("adapter count");
  for (std::uint32_t i = 0; i < n_adapters; ++i) {
    const std::size_t record_off = r.off;
    AdapterState a;
    a.layer_name = r.str("adapter layer name");
    const LayerState* owner = nullptr;
    for (const LayerState& s : out.layers) {
      if (s.name == a.layer_name) {
        owner = &s;
        break;
      }
    }
    if (owner == nullptr) {
      bad_field(record_off,
                "adapter names unknown layer '" + a.layer_name + "'");
    }
    const std::size_t rank_off = r.off;
    a.rank = r.u32("adapter rank");
    a.alpha = r.f32("adapter alpha");
    if (a.rank == 0) bad_field(rank_off, "adapter rank must be >= 1");

    DenseMatrix av(owner->weights.rows, a.rank);
    for (double& v : av.data()) v = r.f64("adapter A");
    DenseMatrix bv(owner->weights.cols, a.rank);
    for (double& v : bv.data()) v = r.f64("adapter B");
    a.a = std::move(av);
    a.b = std::move(bv);

    out.layout.adapters.push_back(
        {a.layer_name, record_off, r.off - record_off});
    out.adapters.push_back(std::move(a));
  }

  if (r.off != buf.size()) {
    bad_field(r.off, std::to_string(buf.size() - r.off) +
                         " trailing bytes after adapter section");
  }
  return out;
}

}  // namespace

void save_model(const ToyModel& model, const std::string& path) {
  const Bytes bytes = encode(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out.good()) throw IoError("short write on checkpoint: " + path);
}

ToyModel load_model(const std::string& path) {
  ParsedCheckpoint parsed = parse(read_file(path));
  const ModelConfig config = model_config_from_json(parsed.config_json);
  return assemble_model(config, std::move(parsed.layers),
                        std::move(parsed.adapters));
}

CheckpointLayout inspect_layout(const std::string& path) {
  return parse(read_file(path)).layout;
}

}  // namespace modulora
