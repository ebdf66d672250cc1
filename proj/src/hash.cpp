// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#include "modulora/hash.hpp"

#include <fstream>

#include "modulora/errors.hpp"

namespace modulora {

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  Fnv1a64 h;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.digest();
}

std::string hex_u64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace modulora
