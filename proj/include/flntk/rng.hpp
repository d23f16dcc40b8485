#pragma once

#include <cmath>
#include <cstdint>

namespace flntk {

// Counter-based generator: every draw is a hash of (seed, stream_id, counter),
// so a stream's sequence is a pure function of its identity. Sub-streams are
// derived by hashing, never by sharing state, which keeps per-client streams
// independent of scheduling.
class rng_stream {
public:
    rng_stream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_(stream_id) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }

    std::uint64_t next_u64() { return at(counter_++); }

    // Value of draw `index` without touching the stream position.
    std::uint64_t at(std::uint64_t index) const {
        std::uint64_t h = mix(seed_ ^ 0x6a09e667f3bcc909ULL);
        h = mix(h ^ stream_);
        return mix(h ^ index);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_uniform() { return to_unit(next_u64()); }

    // Standard normal via Box-Muller; consumes exactly two draws, so draw
    // positions stay predictable (no cached second value).
    double next_gaussian() {
        double u1 = to_unit_open(next_u64());
        double u2 = to_unit(next_u64());
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    rng_stream split(std::uint64_t child) const {
        return rng_stream(mix(seed_ ^ mix(stream_ ^ child)), mix(child ^ 0x9e3779b97f4a7c15ULL));
    }

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static double to_unit(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }
    // (0, 1]: safe as a log argument.
    static double to_unit_open(std::uint64_t x) {
        return (static_cast<double>(x >> 11) + 1.0) * 0x1.0p-53;
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

// Stream ids used by the artifact; one per logical consumer.
namespace stream_ids {
inline constexpr std::uint64_t data = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t partition = 3;
}  // namespace stream_ids

}  // namespace flntk
