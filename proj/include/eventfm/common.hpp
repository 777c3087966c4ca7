#pragma once

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace eventfm {

// Raised for malformed or unreadable input files.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a numeric routine cannot proceed (non-finite loss, bad shapes, ...).
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Counter-based randomness.
//
// All randomness in the project flows through explicit 64-bit seeds. Derived
// streams are obtained by hashing (seed, component ids...) so results do not
// depend on evaluation order or thread scheduling. Distributions are
// implemented here rather than with <random> so that streams are identical
// across standard libraries.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t h, uint64_t v) {
    return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

inline uint64_t hash_str(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> parts) {
    uint64_t h = splitmix64(seed);
    for (uint64_t p : parts) h = hash_combine(h, p);
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed)) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without the cached spare so the stream is one-draw-per-call
    // deterministic.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Unbiased integer in [0, n).
    uint64_t below(uint64_t n) {
        if (n == 0) throw numeric_error("Rng::below(0)");
        uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int poisson(double lambda) {
        if (lambda < 0.0) throw numeric_error("poisson: negative rate");
        if (lambda > 60.0) {
            // split to keep the inversion loop short and exp() in range
            return poisson(lambda / 2.0) + poisson(lambda - lambda / 2.0);
        }
        double l = std::exp(-lambda);
        double p = 1.0;
        int k = 0;
        do {
            ++k;
            p *= uniform();
        } while (p > l);
        return k - 1;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

// ---------------------------------------------------------------------------
// Small string / file helpers shared by the parsers and writers.
// ---------------------------------------------------------------------------

std::vector<std::string> split_tabs(std::string_view line);
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
uint64_t content_hash(const std::string& path);
std::string hash_hex(uint64_t h);

// Deterministic numeric formatting for tabular artifacts.
std::string fmt_double(double v, int significant = 9);

bool parse_double(std::string_view s, double& out);
bool parse_long(std::string_view s, long long& out);

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace eventfm
