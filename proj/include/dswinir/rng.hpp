#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace dswinir {

/// FNV-1a over the bytes of a stream name.
constexpr std::uint64_t stream_id(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Counter-based generator: draw i of stream (seed, stream, counter) is a pure
/// function of those four numbers, so independent streams never interfere and
/// any position can be regenerated without replaying earlier draws.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0)
        : key_(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ counter)) {}
    Rng(std::uint64_t seed, std::string_view stream, std::uint64_t counter = 0)
        : Rng(seed, stream_id(stream), counter) {}

    std::uint64_t next_u64() { return splitmix64(key_ + 0x632be59bd9b4e019ull * ++index_); }

    // 53-bit uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n <= 1 ? 0 : next_u64() % n; }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t key_;
    std::uint64_t index_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dswinir
