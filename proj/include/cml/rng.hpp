#pragma once

#include <cstdint>
#include <random>

namespace cml {

using RandomStream = std::mt19937_64;

/// Independent stream for run `run_index` of an experiment seeded with
/// `master_seed`. The same pair always yields the same stream.
RandomStream make_stream(std::uint64_t master_seed, std::uint64_t run_index);

/// Uniform draw on [0, 1) with 53 random bits.
inline double uniform01(RandomStream& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace cml
