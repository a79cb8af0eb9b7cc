#pragma once

// Sobol low-discrepancy sequence (32-bit, direct indexing) with optional
// digital-shift scrambling. Dimensions 2..37 use the Joe-Kuo direction
// numbers; higher dimensions use further primitive polynomials found by
// search with deterministic odd initial values.

#include <array>
#include <cstdint>
#include <vector>

#include "sptd/error.hpp"
#include "sptd/rng.hpp"

namespace sptd::sobol {

struct Direction {
  unsigned degree;
  std::uint32_t a;                // interior polynomial coefficients, MSB first
  std::vector<std::uint32_t> m;  // initial direction integers, m[i] odd and < 2^(i+1)
};

inline const std::vector<Direction>& joe_kuo_table() {
  static const std::vector<Direction> table{
      {1, 0, {1}},
      {2, 1, {1, 3}},
      {3, 1, {1, 3, 1}},
      {3, 2, {1, 1, 1}},
      {4, 1, {1, 1, 3, 3}},
      {4, 4, {1, 3, 5, 13}},
      {5, 2, {1, 1, 5, 5, 17}},
      {5, 4, {1, 1, 5, 5, 5}},
      {5, 7, {1, 1, 7, 11, 19}},
      {5, 11, {1, 1, 5, 1, 1}},
      {5, 13, {1, 1, 1, 3, 11}},
      {5, 14, {1, 3, 5, 5, 31}},
      {6, 1, {1, 3, 3, 9, 7, 49}},
      {6, 13, {1, 1, 1, 15, 21, 21}},
      {6, 16, {1, 3, 1, 13, 27, 49}},
      {6, 19, {1, 1, 1, 15, 7, 5}},
      {6, 22, {1, 3, 1, 15, 13, 25}},
      {6, 25, {1, 1, 5, 5, 19, 61}},
      {7, 1, {1, 3, 7, 11, 23, 15, 103}},
      {7, 4, {1, 3, 7, 13, 13, 15, 69}},
      {7, 7, {1, 1, 3, 13, 7, 35, 63}},
      {7, 8, {1, 3, 5, 9, 1, 25, 53}},
      {7, 14, {1, 3, 1, 13, 9, 35, 107}},
      {7, 19, {1, 3, 1, 5, 27, 61, 31}},
      {7, 21, {1, 1, 5, 11, 19, 41, 61}},
      {7, 28, {1, 3, 5, 3, 3, 13, 69}},
      {7, 31, {1, 1, 7, 13, 1, 19, 1}},
      {7, 32, {1, 3, 7, 5, 13, 19, 59}},
      {7, 37, {1, 1, 3, 9, 25, 29, 41}},
      {7, 41, {1, 3, 5, 13, 23, 1, 55}},
      {7, 42, {1, 3, 7, 3, 13, 59, 17}},
      {7, 50, {1, 3, 1, 3, 5, 53, 69}},
      {7, 55, {1, 1, 5, 5, 23, 33, 13}},
      {7, 56, {1, 1, 7, 7, 1, 61, 123}},
      {7, 59, {1, 1, 7, 9, 13, 61, 49}},
      {7, 62, {1, 3, 3, 5, 3, 55, 33}},
  };
  return table;
}

// x^degree + a_1 x^(degree-1) + ... + a_(degree-1) x + 1 as a bit mask.
inline std::uint64_t polynomial_bits(unsigned degree, std::uint32_t a) {
  return (std::uint64_t{1} << degree) | (static_cast<std::uint64_t>(a) << 1) | 1u;
}

// True when the polynomial is primitive over GF(2): x has multiplicative
// order exactly 2^degree - 1 modulo it.
inline bool is_primitive(unsigned degree, std::uint32_t a) {
  const std::uint64_t poly = polynomial_bits(degree, a);
  const std::uint64_t order = (std::uint64_t{1} << degree) - 1;
  auto mulx = [&](std::uint64_t v) {
    v <<= 1;
    if (v >> degree & 1u) v ^= poly;
    return v;
  };
  std::uint64_t v = 1;
  for (std::uint64_t e = 1; e <= order; ++e) {
    v = mulx(v);
    if (v == 1) return e == order;
  }
  return false;
}

constexpr std::size_t kMaxDimension = 1024;
constexpr unsigned kBits = 32;

// Direction rows for dimensions 2..dims (dimension 1 is the van der Corput
// sequence and needs no polynomial).
inline std::vector<Direction> directions(std::size_t dims) {
  if (dims > kMaxDimension)
    fail(ErrorCode::UnsupportedDimension, "Sobol dimension " + std::to_string(dims) + " exceeds " + std::to_string(kMaxDimension));
  std::vector<Direction> out;
  const auto& table = joe_kuo_table();
  for (std::size_t d = 0; d + 1 < dims && d < table.size(); ++d) out.push_back(table[d]);
  if (out.size() + 1 >= dims) return out;
  CounterRng rng(0x5eed50b01ULL);
  for (unsigned degree = 8; out.size() + 1 < dims; ++degree)
    for (std::uint32_t a = 0; a < (1u << (degree - 1)) && out.size() + 1 < dims; ++a) {
      if (!is_primitive(degree, a)) continue;
      Direction dir{degree, a, {}};
      for (unsigned i = 0; i < degree; ++i) dir.m.push_back(static_cast<std::uint32_t>(rng.below(std::uint64_t{1} << i)) * 2 + 1);
      out.push_back(std::move(dir));
    }
  return out;
}

class Sequence {
 public:
  explicit Sequence(std::size_t dims) : dims_(dims), v_(dims) {
    if (dims < 1) fail(ErrorCode::UnsupportedDimension, "Sobol dimension must be at least 1");
    for (unsigned b = 0; b < kBits; ++b) v_[0][b] = std::uint32_t{1} << (kBits - 1 - b);
    const auto dirs = directions(dims);
    for (std::size_t j = 1; j < dims; ++j) {
      const auto& d = dirs[j - 1];
      std::array<std::uint32_t, kBits> m{};
      for (unsigned i = 0; i < d.degree && i < kBits; ++i) m[i] = d.m[i];
      for (unsigned i = d.degree; i < kBits; ++i) {
        std::uint32_t val = m[i - d.degree] ^ (m[i - d.degree] << d.degree);
        for (unsigned k = 1; k < d.degree; ++k)
          if (d.a >> (d.degree - 1 - k) & 1u) val ^= m[i - k] << k;
        m[i] = val;
      }
      for (unsigned i = 0; i < kBits; ++i) v_[j][i] = m[i] << (kBits - 1 - i);
    }
  }

  std::size_t dims() const { return dims_; }

  // Integer coordinates of point `index` in dimension j.
  std::uint32_t raw(std::uint64_t index, std::size_t j) const {
    std::uint32_t x = 0;
    for (unsigned b = 0; index != 0 && b < kBits; ++b, index >>= 1)
      if (index & 1u) x ^= v_[j][b];
    return x;
  }

  double point(std::uint64_t index, std::size_t j, std::uint32_t shift = 0) const {
    return static_cast<double>(raw(index, j) ^ shift) * 0x1.0p-32;
  }

 private:
  std::size_t dims_;
  std::vector<std::array<std::uint32_t, kBits>> v_;
};

// Per-dimension digital shifts derived from a seed.
inline std::vector<std::uint32_t> digital_shift(std::size_t dims, std::uint64_t seed) {
  CounterRng rng(derive_seed(seed, "sobol-shift"));
  std::vector<std::uint32_t> s(dims);
  for (auto& v : s) v = static_cast<std::uint32_t>(rng.next_u64() >> 32);
  return s;
}

}  // namespace sptd::sobol
