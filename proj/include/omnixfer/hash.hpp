#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace omnixfer {

inline constexpr uint64_t kFnvBasis = 0xcbf29ce484222325ull;
inline constexpr uint64_t kFnvPrime = 0x100000001b3ull;

inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = kFnvBasis) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

/// Incremental FNV-1a over plain values; used for config fingerprints.
class Hasher {
public:
    Hasher& mix_bytes(const void* bytes, size_t n) {
        h_ = fnv1a64(bytes, n, h_);
        return *this;
    }
    template <typename T>
    Hasher& mix(const T& v) {
        static_assert(std::is_trivially_copyable_v<T> && !std::is_pointer_v<T>);
        return mix_bytes(&v, sizeof(v));
    }
    Hasher& mix(const std::string& s) { return mix_bytes(s.data(), s.size()); }
    Hasher& mix(const char* s) { return mix_bytes(s, std::strlen(s)); }
    uint64_t value() const { return h_; }

private:
    uint64_t h_ = kFnvBasis;
};

}  // namespace omnixfer
