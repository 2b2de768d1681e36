#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "omnixfer/tensor.hpp"

namespace omnixfer {

/// Counter-based generator: Philox4x32-10 blocks keyed by the seed, with
/// Box-Muller on top for normals. Identical seed yields an identical stream
/// on every platform; copying an Rng replays the stream from the copy point.
class Rng {
public:
    static constexpr const char* kAlgorithm = "philox4x32-10+box-muller";

    explicit Rng(uint64_t seed) : seed_(seed) {}

    uint64_t seed() const { return seed_; }

    static std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr,
                                              std::array<uint32_t, 2> key) {
        uint32_t c0 = ctr[0], c1 = ctr[1], c2 = ctr[2], c3 = ctr[3];
        uint32_t k0 = key[0], k1 = key[1];
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                k0 += 0x9E3779B9u;
                k1 += 0xBB67AE85u;
            }
            const uint64_t p0 = static_cast<uint64_t>(0xD2511F53u) * c0;
            const uint64_t p1 = static_cast<uint64_t>(0xCD9E8D57u) * c2;
            const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32);
            const uint32_t lo0 = static_cast<uint32_t>(p0);
            const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32);
            const uint32_t lo1 = static_cast<uint32_t>(p1);
            const uint32_t n0 = hi1 ^ c1 ^ k0;
            const uint32_t n1 = lo1;
            const uint32_t n2 = hi0 ^ c3 ^ k1;
            const uint32_t n3 = lo0;
            c0 = n0;
            c1 = n1;
            c2 = n2;
            c3 = n3;
        }
        return {c0, c1, c2, c3};
    }

    static std::array<uint32_t, 4> philox_block(uint64_t counter, uint64_t key) {
        return philox4x32({static_cast<uint32_t>(counter), static_cast<uint32_t>(counter >> 32),
                           0u, 0u},
                          {static_cast<uint32_t>(key), static_cast<uint32_t>(key >> 32)});
    }

    uint32_t next_u32() {
        if (buf_pos_ == 4) {
            buf_ = philox_block(counter_++, seed_);
            buf_pos_ = 0;
        }
        return buf_[static_cast<size_t>(buf_pos_++)];
    }

    /// Uniform in the open interval (0, 1).
    double uniform01() { return (static_cast<double>(next_u32()) + 0.5) * 0x1p-32; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t seed_ = 0;
    uint64_t counter_ = 0;
    std::array<uint32_t, 4> buf_{};
    int buf_pos_ = 4;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

template <typename T>
Tensor<T> seeded_normal(Shape shape, Rng& rng) {
    Tensor<T> out(std::move(shape));
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(rng.normal());
    return out;
}

template <typename T>
Tensor<T> seeded_normal(Shape shape, uint64_t seed) {
    Rng rng(seed);
    return seeded_normal<T>(std::move(shape), rng);
}

}  // namespace omnixfer
