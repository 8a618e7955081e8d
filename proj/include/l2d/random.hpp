#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace l2d {

// splitmix64; used to derive independent stream seeds from a root seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    return mix_seed(root ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

// Deterministic generator with hand-rolled distributions so that results do
// not depend on the standard library's <random> implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        state_ = seed;
        for (int i = 0; i < 4; ++i) state_ = mix_seed(state_);
        if (state_ == 0) state_ = 0x9e3779b97f4a7c15ULL;
    }

    std::uint64_t next_u64() {
        // xorshift64*
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dULL;
    }

    // uniform in [0, 1)
    double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return n <= 1 ? 0 : next_u64() % n; }

    int uniform_int(int lo, int hi) { // inclusive bounds
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u = 0.0;
        do { u = u01(); } while (u <= 0.0);
        const double v = u01();
        const double r = std::sqrt(-2.0 * std::log(u));
        spare_ = r * std::sin(2.0 * std::numbers::pi * v);
        have_spare_ = true;
        return mean + stddev * r * std::cos(2.0 * std::numbers::pi * v);
    }

    // index sampled from unnormalized nonnegative weights
    std::size_t categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double t = u01() * total;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            t -= weights[i];
            if (t < 0.0) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

    // random probability vector (normalized iid uniforms)
    std::vector<double> simplex(std::size_t k) {
        std::vector<double> p(k);
        double total = 0.0;
        for (auto& v : p) {
            v = u01() + 1e-12;
            total += v;
        }
        for (auto& v : p) v /= total;
        return p;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::uint64_t state_ = 0x9e3779b97f4a7c15ULL;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace l2d
