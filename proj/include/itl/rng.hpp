#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <string_view>
#include <vector>

namespace itl {

// Seed mixing (splitmix64). Children derived from (key, tag) are stable
// across platforms, so every stream in a run is reproducible from the
// experiment seed alone.
inline std::uint64_t mix_seed(std::uint64_t key, std::uint64_t tag) {
    std::uint64_t z = key + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_tag(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic RNG. mt19937_64 supplies the bits; the distributions are
// written out here because the std:: distribution algorithms are
// implementation-defined and we need identical draws everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(seed), eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // (0, 1]; safe for log()
    double uniform_pos() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Sample k distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k && !pool.empty(); ++i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(pool.size()));
            out.push_back(pool[j]);
            pool[j] = pool.back();
            pool.pop_back();
        }
        return out;
    }

    Rng split(std::uint64_t tag) const { return Rng(mix_seed(key_, tag)); }
    Rng split(std::string_view tag) const { return Rng(mix_seed(key_, hash_tag(tag))); }

private:
    std::uint64_t key_;
    std::mt19937_64 eng_;
};

}  // namespace itl
