// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/bitpack.hpp"

#include <string>

#include "modulora/errors.hpp"

namespace modulora {

bool is_supported_bit_width(int bits) {
  return bits == 2 || bits == 3 || bits == 4 || bits == 8;
}

namespace {

void require_supported(int bits) {
  if (!is_supported_bit_width(bits)) {
    throw ConfigError("bitpack: unsupported bit width " +
                      std::to_string(bits) + " (expected 2, 3, 4 or 8)");
  }
}

// Reads the code at bit position index*bits. No bounds checks.
std::uint32_t read_code(const PackedCodes& p, std::size_t index) {
  const std::size_t bit = index * static_cast<std::size_t>(p.bits);
  const std::size_t word = bit / 32;
  const std::size_t off = bit % 32;
  const std::uint32_t mask = (1u << p.bits) - 1u;
  std::uint64_t v = p.words[word] >> off;
  if (off + static_cast<std::size_t>(p.bits) > 32) {
    v |= static_cast<std::uint64_t>(p.words[word + 1]) << (32 - off);
  }
  return static_cast<std::uint32_t>(v) & mask;
}

void validate_metadata(const PackedCodes& p) {
  require_supported(p.bits);
  const std::size_t expect = packed_word_count(p.count, p.bits);
  if (p.words.size() != expect) {
    throw FormatError(FormatError::Kind::BadField, 0,
                      "bitpack: corrupted length metadata: " +
                          std::to_string(p.words.size()) + " words for " +
                          std::to_string(p.count) + " codes at " +
                          std::to_string(p.bits) + " bits (expected " +
                          std::to_string(expect) + ")");
  }
  // Trailing bits beyond the last code must be zero.
  const std::size_t used_bits = p.count * static_cast<std::size_t>(p.bits);
  if (!p.words.empty()) {
    const std::size_t tail = p.words.size() * 32 - used_bits;
    if (tail > 0 && tail < 32) {
      const std::uint32_t last = p.words.back();
      if ((last >> (32 - tail)) != 0) {
        throw FormatError(FormatError::Kind::BadField, 0,
                          "bitpack: nonzero trailing bits in last word");
      }
    }
  }
}

}  // namespace

std::size_t packed_word_count(std::size_t count, int bits) {
  return (count * static_cast<std::size_t>(bits) + 31) / 32;
}

PackedCodes pack(std::span<const std::uint32_t> codes, int bits) {
  require_supported(bits);
  const std::uint32_t limit = 1u << bits;
  PackedCodes p;
  p.bits = bits;
  p.count = codes.size();
  p.words.assign(packed_word_count(codes.size(), bits), 0u);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const std::uint32_t c = codes[i];
    if (c >= limit) {
      throw RangeError("bitpack: code " + std::to_string(c) + " at index " +
                       std::to_string(i) + " exceeds " +
                       std::to_string(bits) + "-bit range");
    }
    const std::size_t bit = i * static_cast<std::size_t>(bits);
    const std::size_t word = bit / 32;
    const std::size_t off = bit % 32;
    p.words[word] |= c << off;
    if (off + static_cast<std::size_t>(bits) > 32) {
      p.words[word + 1] |= c >> (32 - off);
    }
  }
  return p;
}

std::vector<std::uint32_t> unpack(const PackedCodes& p) {
  validate_metadata(p);
  std::vector<std::uint32_t> out(p.count);
  for (std::size_t i = 0; i < p.count; ++i) out[i] = read_code(p, i);
  return out;
}

std::vector<std::uint32_t> unpack_row(const PackedCodes& p, std::size_t row,
                                      std::size_t row_len) {
  validate_metadata(p);
  const std::size_t begin = row * row_len;
  if (begin + row_len > p.count) {
    throw RangeError("bitpack: row " + std::to_string(row) + " of length " +
                     std::to_string(row_len) + " runs past " +
                     std::to_string(p.count) + " codes");
  }
  std::vector<std::uint32_t> out(row_len);
  for (std::size_t j = 0; j < row_len; ++j) out[j] = read_code(p, begin + j);
  return out;
}

std::uint32_t unpack_one(const PackedCodes& p, std::size_t index) {
  validate_metadata(p);
  if (index >= p.count) {
    throw RangeError("bitpack: index " + std::to_string(index) +
                     " out of range [0, " + std::to_string(p.count) + ")");
  }
  return read_code(p, index);
}

}  // namespace modulora
