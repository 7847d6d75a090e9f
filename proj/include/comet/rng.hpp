#pragma once

#include <cmath>
#include <cstdint>

namespace comet {

// Counter-based random stream (Philox4x32-10). Streams are cheap values:
// derive() forks an independent child keyed by a tag, so parallel consumers
// can draw without sharing state. Same seed + same derivation chain + same
// draw order => identical values.
class RngStream {
public:
    RngStream() : RngStream(0) {}
    explicit RngStream(std::uint64_t seed) : key_(mix64(seed ^ 0x434f4d4554524e47ull)) {}

    RngStream derive(std::uint64_t tag) const {
        RngStream child;
        child.key_ = mix64(key_ ^ mix64(tag));
        return child;
    }
    RngStream derive(std::uint64_t tag, std::uint64_t index) const {
        return derive(tag).derive(index ^ 0x9e3779b97f4a7c15ull);
    }

    std::uint64_t next_u64() {
        if (avail_ == 0) refill();
        return buf_[--avail_];
    }

    // [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    float uniform_f32() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    // uniform integer in [0,n)
    std::uint32_t below(std::uint32_t n) {
        // rejection-free 64-bit multiply-shift; bias < 2^-32, irrelevant here
        return static_cast<std::uint32_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0,1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // standard Gumbel via -ln(-ln(u)) with u clamped away from {0,1}
    double gumbel() {
        double u = uniform();
        if (u < 1e-12) u = 1e-12;
        if (u > 1.0 - 1e-12) u = 1.0 - 1e-12;
        return -std::log(-std::log(u));
    }

    std::uint64_t key() const { return key_; }

private:
    static std::uint64_t mix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    void refill() {
        std::uint32_t c0 = static_cast<std::uint32_t>(ctr_);
        std::uint32_t c1 = static_cast<std::uint32_t>(ctr_ >> 32);
        std::uint32_t c2 = 0, c3 = 0;
        std::uint32_t k0 = static_cast<std::uint32_t>(key_);
        std::uint32_t k1 = static_cast<std::uint32_t>(key_ >> 32);
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = 0xD2511F53ull * c0;
            const std::uint64_t p1 = 0xCD9E8D57ull * c2;
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            c0 = hi1 ^ c1 ^ k0;
            c1 = lo1;
            c2 = hi0 ^ c3 ^ k1;
            c3 = lo0;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        buf_[0] = (static_cast<std::uint64_t>(c1) << 32) | c0;
        buf_[1] = (static_cast<std::uint64_t>(c3) << 32) | c2;
        avail_ = 2;
        ++ctr_;
    }

    std::uint64_t key_ = 0;
    std::uint64_t ctr_ = 0;
    std::uint64_t buf_[2] = {0, 0};
    int avail_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Derivation tags used across the library; fixed so runs are reproducible.
namespace rng_tag {
inline constexpr std::uint64_t kInit = 1;       // parameter initialization
inline constexpr std::uint64_t kEpisode = 2;    // episode generation
inline constexpr std::uint64_t kGumbel = 3;     // module-selection noise
inline constexpr std::uint64_t kResample = 4;   // stratified resampling offset
inline constexpr std::uint64_t kIteration = 5;  // per-training-iteration fork
inline constexpr std::uint64_t kSpecs = 6;      // batch spec sampling
inline constexpr std::uint64_t kStep = 7;       // per-timestep fork
inline constexpr std::uint64_t kEmit = 8;       // observation noise when sampling the model
inline constexpr std::uint64_t kChoice = 9;     // categorical draws (guided proposal)
inline constexpr std::uint64_t kSplit = 10;     // dataset splits
inline constexpr std::uint64_t kEval = 11;      // evaluation episodes
}  // namespace rng_tag

}  // namespace comet
