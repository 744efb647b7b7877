#pragma once

#include <cstdint>
#include <random>

namespace ikl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream namespaces so reference, training, coercivity and
// prediction batches never share random numbers.
enum class Stream : std::uint64_t {
  training = 1,
  reference = 2,
  coercivity = 3,
  prediction = 4,
  noise = 5,
  large_n = 6,
};

// Per-trajectory stream: seed xor index, whitened through splitmix64 so that
// neighbouring indices give unrelated generator states.
inline Rng make_rng(std::uint64_t seed, Stream ns, std::uint64_t index) {
  const std::uint64_t base = seed ^ splitmix64(static_cast<std::uint64_t>(ns) * 0x100000001b3ULL);
  return Rng(splitmix64(base ^ index));
}

}  // namespace ikl
