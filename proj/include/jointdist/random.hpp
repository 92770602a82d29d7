#pragma once

#include <cstdint>

namespace jointdist {

/// Counter-based random stream (splitmix64). The n-th output is a pure
/// function of (seed, n), and independent substreams are derived by hashing a
/// tag into the seed, so any consumer can be given its own stream without
/// coordinating with others.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();

    /// Uniform in the open interval (0, 1).
    double next_uniform();

    /// Standard normal via Box-Muller; consumes two uniforms per draw.
    double next_gaussian();

    /// Independent stream derived from this stream's current position and a
    /// tag. Does not advance this stream.
    RandomStream substream(uint64_t tag) const;

private:
    uint64_t state_;
};

}  // namespace jointdist
