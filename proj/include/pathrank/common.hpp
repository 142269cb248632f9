#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <charconv>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pathrank {

using BigInt = boost::multiprecision::cpp_int;

// 64-bit FNV-1a. Used for config/content hashes and for freezing per-path noise.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Stage seeds are derived from the master seed and the stage name so each
// pipeline stage is independently reproducible.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
  return splitmix64(master ^ fnv1a64(stage));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

// Shortest decimal form that round-trips through strtod. "1" becomes "1.0" so
// ratio tokens read like W1.0_E0.25.
inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_ratio(double v) {
  std::string s = format_double(v);
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
      s.find('E') == std::string::npos && s.find("inf") == std::string::npos &&
      s.find("nan") == std::string::npos) {
    s += ".0";
  }
  return s;
}

inline double parse_double(std::string_view s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  }
  return v;
}

// Uniform integer in [0, n). Top-bits rejection keeps the draw exact for
// arbitrary-precision n.
inline BigInt uniform_bigint(std::mt19937_64& rng, const BigInt& n) {
  if (n <= 0) throw std::invalid_argument("uniform_bigint: n must be positive");
  if (n <= std::numeric_limits<std::uint64_t>::max()) {
    std::uniform_int_distribution<std::uint64_t> d(0, static_cast<std::uint64_t>(n - 1));
    return BigInt(d(rng));
  }
  const unsigned bits = boost::multiprecision::msb(n) + 1;
  const unsigned words = (bits + 63) / 64;
  const unsigned top_bits = bits - (words - 1) * 64;
  const std::uint64_t top_mask =
      top_bits == 64 ? ~0ull : ((std::uint64_t(1) << top_bits) - 1);
  while (true) {
    BigInt x = 0;
    for (unsigned w = 0; w < words; ++w) {
      std::uint64_t chunk = rng();
      if (w == words - 1) chunk &= top_mask;
      x |= BigInt(chunk) << (64 * w);
    }
    if (x < n) return x;
  }
}

inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
  return d(rng);
}

}  // namespace pathrank
