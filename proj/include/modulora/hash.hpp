// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace modulora {

// 64-bit FNV-1a. Not cryptographic; used for state fingerprints (frozen-base
// checks, golden-file identity) where determinism is what matters.
class Fnv1a64 {
 public:
  static constexpr std::uint64_t kOffset = 1469598103934665603ull;
  static constexpr std::uint64_t kPrime = 1099511628211ull;

  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= kPrime;
    }
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void update_value(const T& v) {
    update(&v, sizeof(T));
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void update_span(std::span<const T> s) {
    update(s.data(), s.size_bytes());
  }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = kOffset;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
  Fnv1a64 h;
  h.update(data, n);
  return h.digest();
}

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  return fnv1a64(bytes.data(), bytes.size());
}

// Hash of a whole file's contents. Throws IoError if unreadable.
std::uint64_t fnv1a64_file(const std::string& path);

std::string hex_u64(std::uint64_t v);

}  // namespace modulora
