#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace dqkit {

// Philox4x32-10 counter-based generator. A (key, counter) pair maps to one
// block of four 32-bit words; there is no hidden state.
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key);
};

std::uint64_t splitmix64(std::uint64_t x);
Philox4x32::Key derive_key(std::uint64_t seed, std::uint64_t domain);

inline double u64_to_unit(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }
inline double u32_to_open_unit(std::uint32_t x) { return (static_cast<double>(x) + 0.5) * 0x1.0p-32; }
inline std::uint64_t join_words(std::uint32_t hi, std::uint32_t lo) {
    return (static_cast<std::uint64_t>(hi) << 32) | lo;
}
__extension__ typedef unsigned __int128 uint128_t;

// Multiply-shift reduction of a 64-bit word onto [0, n).
inline std::uint64_t reduce_below(std::uint64_t x, std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<uint128_t>(x) * n) >> 64);
}

// Sequential stream over counters (block, sub, id_lo, id_hi) under one key.
// Streams with different (domain, id, sub) never overlap.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t domain, std::uint64_t id, std::uint32_t sub = 0)
        : key_(derive_key(seed, domain)),
          ctr_{0u, sub, static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32)} {}

    std::uint32_t next_u32() {
        if (pos_ == 4) refill();
        return buf_[pos_++];
    }
    std::uint64_t next_u64() {
        const std::uint32_t hi = next_u32();
        return join_words(hi, next_u32());
    }
    double uniform() { return u64_to_unit(next_u64()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double exponential(double mean) { return -mean * std::log1p(-uniform()); }
    std::uint64_t below(std::uint64_t n) { return reduce_below(next_u64(), n); }
    bool bernoulli(double p) { return uniform() < p; }

private:
    void refill() {
        buf_ = Philox4x32::block(ctr_, key_);
        ++ctr_[0];
        pos_ = 0;
    }

    Philox4x32::Key key_;
    Philox4x32::Counter ctr_;
    Philox4x32::Counter buf_{};
    int pos_ = 4;
};

// Named stream domains.
namespace domain {
inline constexpr std::uint64_t creator_latent = 0x63726561746f72ull;
inline constexpr std::uint64_t viewer_latent = 0x766965776572ull;
inline constexpr std::uint64_t assignment = 0x61737369676eull;
inline constexpr std::uint64_t session = 0x73657373696f6eull;
inline constexpr std::uint64_t oracle_viewer = 0x6f7261636c6576ull;
inline constexpr std::uint64_t oracle_session = 0x6f7261636c6573ull;
inline constexpr std::uint64_t rerandomize = 0x726572616e64ull;
inline constexpr std::uint64_t instances = 0x696e7374616e6365ull;
}  // namespace domain

}  // namespace dqkit
