// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
//
// Bit-level packing of quantization codes into 32-bit words. Codes are laid
// out LSB-first in index order; a code may straddle a word boundary (always
// the case for some positions at 3 bits). Unused trailing bits in the last
// word are zero, so equal code sequences pack to equal words.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace modulora {

struct PackedCodes {
  int bits = 0;                      // one of {2, 3, 4, 8}
  std::size_t count = 0;             // number of codes
  std::vector<std::uint32_t> words;  // ceil(count * bits / 32) words

  std::size_t packed_bytes() const { return words.size() * 4; }
};

bool is_supported_bit_width(int bits);

// Number of 32-bit words needed for `count` codes of `bits` each.
std::size_t packed_word_count(std::size_t count, int bits);

// Throws ConfigError for unsupported widths, RangeError if any code >= 2^bits.
PackedCodes pack(std::span<const std::uint32_t> codes, int bits);

// Full unpack in index order. Throws FormatError when the word count does not
// match `count`/`bits` or a trailing bit is set.
std::vector<std::uint32_t> unpack(const PackedCodes& p);

// Codes [row*row_len, (row+1)*row_len) without touching the rest. Throws
// RangeError when the requested slice runs past `count`.
std::vector<std::uint32_t> unpack_row(const PackedCodes& p, std::size_t row,
                                      std::size_t row_len);

// Single code at `index`; bounds-checked.
std::uint32_t unpack_one(const PackedCodes& p, std::size_t index);

}  // namespace modulora
