#pragma once

#include <cstdint>
#include <random>

namespace napt {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Independent stream for (seed, a, b); used to give every simulation, query
// and chunk of replications its own generator.
Rng make_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace napt
