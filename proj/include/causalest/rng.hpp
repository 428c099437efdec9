#pragma once

#include "causalest/common.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace causalest {

// All randomness hangs off one root seed. Child streams are addressed by a
// slash-separated path ("bound/realization/17"), so a parallel batch can open
// the stream it needs without touching any shared generator.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a offset basis
  for (char c : path) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(root) ^ h);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view path, std::uint64_t index) {
  return derive_seed(root, std::string(path) + "/" + std::to_string(index));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  template <typename Scalar = double>
  Scalar normal() {
    return static_cast<Scalar>(normal_(engine_));
  }

  template <typename Scalar = double>
  Vector<Scalar> normal_vector(Index n) {
    Vector<Scalar> v(n);
    for (Index i = 0; i < n; ++i) v[i] = normal<Scalar>();
    return v;
  }

  template <typename Scalar = double>
  Scalar uniform(Scalar lo, Scalar hi) {
    return lo + (hi - lo) * static_cast<Scalar>(uniform_(engine_));
  }

  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace causalest
