#pragma once

#include <cstdint>
#include <random>

namespace raresim {

using Rng = std::mt19937_64;

/// Derives an independent generator for sub-stream `stream` of `seed`.
///
/// Every sampler that shards work (per block, per worker, per restart) takes
/// its generator from here, so results depend only on (seed, stream layout)
/// and never on thread scheduling.
Rng make_stream(std::uint64_t seed, std::uint64_t stream);

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

}  // namespace raresim
