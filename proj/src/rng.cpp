#include "napt/rng.hpp"

namespace napt {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng make_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    const std::uint64_t h1 = splitmix64(seed ^ splitmix64(a + 0x632be59bd9b4e019ULL));
    const std::uint64_t h2 = splitmix64(h1 ^ splitmix64(b + 0x85157af5ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(h1), static_cast<std::uint32_t>(h1 >> 32),
                      static_cast<std::uint32_t>(h2), static_cast<std::uint32_t>(h2 >> 32)};
    return Rng(seq);
}

}  // namespace napt
