#ifndef AGESTACK_RNG_HPP
#define AGESTACK_RNG_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace agestack {

// Deterministic hashing and random numbers. All randomness in the project
// flows through Rng, and every Rng is seeded through mix_seed from the
// master seed plus a content digest of whatever the fit consumes. Equal
// inputs therefore yield bit-equal model fits regardless of which code
// path requested them.

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Digest128 {
    std::uint64_t lo = 0;
    std::uint64_t hi = 0;

    friend bool operator==(const Digest128&, const Digest128&) = default;

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(32, '0');
        for (int i = 0; i < 16; ++i) {
            out[15 - i] = digits[(hi >> (4 * i)) & 0xf];
            out[31 - i] = digits[(lo >> (4 * i)) & 0xf];
        }
        return out;
    }
};

// Streaming FNV-1a over two lanes with distinct offset bases. Doubles are
// hashed by IEEE-754 bit pattern, so digests are exact, not approximate.
class Hasher {
  public:
    Hasher() = default;

    Hasher& bytes(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            lo_ = (lo_ ^ p[i]) * kFnvPrime;
            hi_ = (hi_ ^ p[i]) * kFnvPrime;
        }
        return *this;
    }

    Hasher& u64(std::uint64_t v) {
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        return bytes(buf, 8);
    }

    Hasher& i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }

    Hasher& f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        return u64(bits);
    }

    Hasher& str(std::string_view s) {
        bytes(s.data(), s.size());
        return u64(s.size());  // length-delimited, so "ab"+"c" != "a"+"bc"
    }

    Hasher& f64s(const double* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) f64(data[i]);
        return u64(n);
    }

    Hasher& f64s(const std::vector<double>& v) { return f64s(v.data(), v.size()); }

    Digest128 digest() const { return {lo_, hi_}; }

  private:
    std::uint64_t lo_ = kFnvOffset;
    std::uint64_t hi_ = splitmix64(kFnvOffset);
};

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = kFnvOffset;
    for (unsigned char c : s) h = (h ^ c) * kFnvPrime;
    return h;
}

namespace detail {
inline std::uint64_t seed_part(std::uint64_t v) { return v; }
inline std::uint64_t seed_part(std::string_view s) { return fnv1a(s); }
inline std::uint64_t seed_part(const char* s) { return fnv1a(s); }
inline std::uint64_t seed_part(const Digest128& d) { return splitmix64(d.lo) ^ d.hi; }
}  // namespace detail

// Folds any mix of integers, strings, and digests into one 64-bit seed.
template <typename... Parts>
std::uint64_t mix_seed(std::uint64_t master, const Parts&... parts) {
    std::uint64_t state = splitmix64(master);
    ((state = splitmix64(state ^ detail::seed_part(parts))), ...);
    return state;
}

// mt19937_64 with hand-rolled output transforms. The standard pins the
// engine's bit stream but not the distributions, so uniform/normal are
// implemented here to keep results identical across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform on {0, ..., bound-1}, unbiased via rejection.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t x = engine_();
            if (x >= threshold) return x % bound;
        }
    }

    // Standard normal, Box-Muller with a cached spare.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so the log is finite.
        const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace agestack

#endif
