#pragma once

#include <cstdint>
#include <random>

#include "latseg/tensor.hpp"

namespace latseg {

// Independent stream keyed by (seed, index, stream tag). Used wherever a
// result must not depend on how many other draws were made before it.
inline Rng derive_rng(std::uint64_t seed, std::int64_t index, std::uint64_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(index),
                    std::uint32_t(std::uint64_t(index) >> 32), std::uint32_t(stream), std::uint32_t(stream >> 32)};
  return Rng(seq);
}

}  // namespace latseg
