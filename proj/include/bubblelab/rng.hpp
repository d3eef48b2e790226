#pragma once

// Counter-based random numbers for reproducible Monte Carlo.
//
// Every draw is a pure function of (key, counter). A simulation derives one key
// per (master seed, prior label) and uses the path index as the high half of
// the counter, so a path's increments do not depend on which worker produced
// them or in which order paths were scheduled.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace bubblelab {

// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as
// easy as 1, 2, 3").
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key)
    {
        for (int round = 0; round < 10; ++round) {
            ctr = single_round(ctr, key);
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static Counter single_round(const Counter& c, const Key& k)
    {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

// 64-bit FNV-1a; stable across platforms, used to fold labels into keys.
constexpr std::uint64_t fnv1a64(std::string_view text)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char ch : text) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ull;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_stream_key(std::uint64_t master_seed, std::string_view label)
{
    return splitmix64(splitmix64(master_seed) ^ fnv1a64(label));
}

// Sequential view of one (key, path) stream. Cheap to construct; holds no
// shared state.
class PathStream {
public:
    PathStream(std::uint64_t stream_key, std::uint64_t path_index)
        : key_{static_cast<std::uint32_t>(stream_key), static_cast<std::uint32_t>(stream_key >> 32)},
          path_(path_index)
    {}

    // Uniform on the open interval (0, 1), 53-bit resolution.
    double uniform()
    {
        if (cached_uniforms_ == 0) {
            refill();
        }
        --cached_uniforms_;
        return uniforms_[cached_uniforms_];
    }

    // Standard normal via Box-Muller; consumes one Philox block per pair.
    double normal()
    {
        if (has_spare_normal_) {
            has_spare_normal_ = false;
            return spare_normal_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_normal_ = radius * std::sin(angle);
        has_spare_normal_ = true;
        return radius * std::cos(angle);
    }

private:
    Philox4x32::Key key_;
    std::uint64_t path_;
    std::uint64_t block_ = 0;
    std::array<double, 2> uniforms_{};
    int cached_uniforms_ = 0;
    double spare_normal_ = 0.0;
    bool has_spare_normal_ = false;

    static double to_open_unit(std::uint32_t hi, std::uint32_t lo)
    {
        const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    void refill()
    {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_),
                                      static_cast<std::uint32_t>(block_ >> 32),
                                      static_cast<std::uint32_t>(path_),
                                      static_cast<std::uint32_t>(path_ >> 32)};
        ++block_;
        const auto out = Philox4x32::block(ctr, key_);
        // stored reversed so uniform() hands them out in generation order
        uniforms_[1] = to_open_unit(out[0], out[1]);
        uniforms_[0] = to_open_unit(out[2], out[3]);
        cached_uniforms_ = 2;
    }
};

} // namespace bubblelab
