#pragma once

#include <cstdint>
#include <random>

namespace otna {

/// SplitMix64 finalizer. Used to derive independent engine seeds from
/// a (seed, stream) pair.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded random stream.
///
/// A stream is identified by a user seed and a stream id. Both are mixed
/// through SplitMix64 before seeding a 64-bit Mersenne twister, so streams
/// that differ in either component are statistically independent and runs
/// are reproducible bit-for-bit on a given standard library. Use `split`
/// to hand child streams to replicates or parallel workers.
class Rng {
public:
    using engine_type = std::mt19937_64;

    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream), engine_(derive(seed, stream))
    {
    }

    /// Child stream; independent of this one and of siblings with other ids.
    Rng split(std::uint64_t child) const
    {
        return Rng(splitmix64(seed_ ^ splitmix64(stream_ + 0x632be59bd9b4e019ULL)), child);
    }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

    /// Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

    engine_type& engine() noexcept { return engine_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

private:
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream)
    {
        return splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 1));
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    engine_type engine_;
};

} // namespace otna
