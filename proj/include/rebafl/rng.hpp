#pragma once

#include <cstdint>
#include <random>

namespace rebafl::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Named substreams derived from a single run seed. Every consumer of
// randomness draws from its own (tag, a, b) stream, so adding clients,
// reordering work or running in parallel never perturbs another stream.
enum class Stream : std::uint64_t {
    ModelInit = 1,
    Partition = 2,
    Synthetic = 3,
    Dropout = 4,
    ClientTrain = 5,
    GradCheck = 6,
    Sweep = 7,
};

inline std::uint64_t derive(std::uint64_t seed, Stream tag,
                            std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(seed ^ 0x8c9257931f4b0a6dull);
    h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return h;
}

inline std::mt19937_64 engine(std::uint64_t seed, Stream tag,
                              std::uint64_t a = 0, std::uint64_t b = 0) {
    return std::mt19937_64(derive(seed, tag, a, b));
}

}  // namespace rebafl::rng
