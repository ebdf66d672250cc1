// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <vector>

#include "modulora/bitpack.hpp"
#include "modulora/errors.hpp"
#include "modulora/rng.hpp"

using namespace modulora;

namespace {

std::vector<std::uint32_t> random_codes(std::size_t n, int bits,
                                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint32_t> codes(n);
  for (auto& c : codes) {
    c = static_cast<std::uint32_t>(rng.uniform_index(1u << bits));
  }
  return codes;
}

}  // namespace

TEST_CASE("frozen word layout") {
  const std::vector<std::uint32_t> codes = {3, 1, 2, 0};
  const PackedCodes p = pack(codes, 2);
  CHECK(p.bits == 2);
  CHECK(p.count == 4);
  REQUIRE(p.words.size() == 1);
  CHECK(p.words[0] == 0x00000027u);
  CHECK(p.packed_bytes() == 4);
}

TEST_CASE("word counts") {
  CHECK(packed_word_count(4, 2) == 1);
  CHECK(packed_word_count(11, 3) == 2);  // 33 bits straddle into a 2nd word
  CHECK(packed_word_count(32, 8) == 8);
  CHECK(packed_word_count(0, 4) == 0);
  CHECK(packed_word_count(16, 2) == 1);
  CHECK(packed_word_count(17, 2) == 2);

  const PackedCodes p = pack(random_codes(11, 3, 1), 3);
  CHECK(p.words.size() == 2);
}

TEST_CASE("supported widths") {
  for (int b : {2, 3, 4, 8}) CHECK(is_supported_bit_width(b));
  for (int b : {0, 1, 5, 6, 7, 16, 32}) CHECK(!is_supported_bit_width(b));
  CHECK_THROWS_AS(pack(std::vector<std::uint32_t>{0}, 5), ConfigError);
  CHECK_THROWS_AS(pack(std::vector<std::uint32_t>{0}, 0), ConfigError);
}

TEST_CASE("roundtrip across widths and lengths") {
  for (int bits : {2, 3, 4, 8}) {
    for (std::size_t n : {std::size_t{0}, std::size_t{1}, std::size_t{5},
                          std::size_t{31}, std::size_t{32}, std::size_t{33},
                          std::size_t{64}, std::size_t{100},
                          std::size_t{200}}) {
      const std::vector<std::uint32_t> codes =
          random_codes(n, bits, 1000 + n * 10 + static_cast<std::size_t>(bits));
      const PackedCodes p = pack(codes, bits);
      CHECK(p.words.size() == packed_word_count(n, bits));
      CHECK(unpack(p) == codes);
    }
  }
}

TEST_CASE("equal code sequences pack to equal words") {
  const std::vector<std::uint32_t> codes = random_codes(50, 3, 9);
  CHECK(pack(codes, 3).words == pack(codes, 3).words);
}

TEST_CASE("row slices agree with the full unpack") {
  const std::size_t rows = 7, row_len = 9;
  const std::vector<std::uint32_t> codes = random_codes(rows * row_len, 3, 5);
  const PackedCodes p = pack(codes, 3);
  const std::vector<std::uint32_t> all = unpack(p);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::vector<std::uint32_t> slice = unpack_row(p, r, row_len);
    REQUIRE(slice.size() == row_len);
    for (std::size_t j = 0; j < row_len; ++j) {
      CHECK(slice[j] == all[r * row_len + j]);
    }
  }
  CHECK_THROWS_AS(unpack_row(p, rows, row_len), RangeError);
}

TEST_CASE("single-code access") {
  const std::vector<std::uint32_t> codes = random_codes(37, 3, 6);
  const PackedCodes p = pack(codes, 3);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    CHECK(unpack_one(p, i) == codes[i]);
  }
  CHECK_THROWS_AS(unpack_one(p, codes.size()), RangeError);
}

TEST_CASE("corrupted containers are rejected") {
  PackedCodes p = pack(random_codes(11, 3, 2), 3);

  PackedCodes extra = p;
  extra.words.push_back(0);
  CHECK_THROWS_AS(unpack(extra), FormatError);

  PackedCodes missing = p;
  missing.words.pop_back();
  CHECK_THROWS_AS(unpack(missing), FormatError);

  PackedCodes trailing = p;  // 33 bits used, so bit 1 of word 1 is padding
  trailing.words.back() |= 0x80000000u;
  CHECK_THROWS_AS(unpack(trailing), FormatError);
}

TEST_CASE("out-of-range codes are rejected") {
  CHECK_THROWS_AS(pack(std::vector<std::uint32_t>{4}, 2), RangeError);
  CHECK_THROWS_AS(pack(std::vector<std::uint32_t>{0, 1, 8}, 3), RangeError);
  CHECK_THROWS_AS(pack(std::vector<std::uint32_t>{256}, 8), RangeError);
  CHECK_NOTHROW(pack(std::vector<std::uint32_t>{3}, 2));
  CHECK_NOTHROW(pack(std::vector<std::uint32_t>{255}, 8));
}
