#include "jointdist/random.hpp"

#include <cmath>
#include <numbers>

namespace jointdist {

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

uint64_t RandomStream::next_u64() {
    state_ += kGolden;
    return mix(state_);
}

double RandomStream::next_uniform() {
    // 53-bit mantissa; shift keeps the result strictly inside (0, 1).
    const uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double RandomStream::next_gaussian() {
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi_v<double> * u2);
}

RandomStream RandomStream::substream(uint64_t tag) const {
    return RandomStream(mix(state_ ^ mix(tag * kGolden + 0x6A09E667F3BCC909ull)));
}

}  // namespace jointdist
